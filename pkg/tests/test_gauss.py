"""Unit tests for the Gaussian model layer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outagekit import (
    BusPair,
    conditional_correlation,
    conditional_covariance,
    encrypt_model,
    fit_gaussian,
    kl_divergence,
    log_density,
    log_likelihood_ratio,
    new_gaussian,
    sample,
)
from outagekit.errors import (
    DegenerateVariance,
    DimensionMismatch,
    InsufficientSamples,
    NotPositiveDefinite,
)
from outagekit.gauss import mahalanobis_sq, mahalanobis_sq_rows, trace_inverse

LOG_2PI = np.log(2.0 * np.pi)


def random_spd(p, rng, scale=1.0):
    a = rng.standard_normal((p, p))
    return scale * (a @ a.T + 0.1 * np.eye(p))


class TestConstruction:
    def test_identity_log_det_zero(self):
        m = new_gaussian([0.0, 0.0], np.eye(2))
        assert m.log_det == pytest.approx(0.0, abs=1e-12)
        assert m.dim == 2

    def test_scalar_log_det(self):
        m = new_gaussian([0.0], [[4.0]])
        assert m.log_det == pytest.approx(np.log(4.0), rel=1e-12)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            new_gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric_raises(self):
        with pytest.raises(NotPositiveDefinite):
            new_gaussian([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])

    def test_dim_mismatch_raises(self):
        with pytest.raises(DimensionMismatch):
            new_gaussian([0.0, 0.0], np.eye(3))

    def test_negative_reg_raises(self):
        with pytest.raises(ValueError):
            new_gaussian([0.0], [[1.0]], reg=-1.0)

    def test_reg_added_to_cov(self):
        m = new_gaussian([0.0, 0.0], np.eye(2), reg=0.5)
        assert np.allclose(m.cov, 1.5 * np.eye(2))

    def test_log_det_matches_chol_diagonal(self):
        rng = np.random.default_rng(0)
        m = new_gaussian(np.zeros(5), random_spd(5, rng))
        assert m.log_det == pytest.approx(
            2.0 * np.sum(np.log(np.diag(m.chol))), rel=1e-10
        )
        assert np.allclose(m.chol @ m.chol.T, m.cov, atol=1e-12)

    def test_bus_pair_requires_distinct(self):
        with pytest.raises(DimensionMismatch):
            BusPair(3, 3)
        assert BusPair(7, 2).as_tuple() == (2, 7)


class TestDensities:
    def test_standard_normal_at_origin(self):
        m = new_gaussian([0.0], [[1.0]])
        assert log_density(m, [0.0]) == pytest.approx(-0.5 * LOG_2PI, rel=1e-12)

    def test_bivariate_at_origin(self):
        m = new_gaussian([0.0, 0.0], np.eye(2))
        assert log_density(m, [0.0, 0.0]) == pytest.approx(-LOG_2PI, rel=1e-12)

    def test_shift_invariance(self):
        m = new_gaussian([1.0], [[1.0]])
        assert log_density(m, [1.0]) == pytest.approx(-0.5 * LOG_2PI, rel=1e-12)

    def test_ratio_zero_at_midpoint(self):
        f = new_gaussian([1.0], [[1.0]])
        g = new_gaussian([0.0], [[1.0]])
        assert log_likelihood_ratio(f, g, [0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_ratio_half_at_mean(self):
        f = new_gaussian([1.0], [[1.0]])
        g = new_gaussian([0.0], [[1.0]])
        assert log_likelihood_ratio(f, g, [1.0]) == pytest.approx(0.5, rel=1e-12)

    def test_ratio_dim_mismatch(self):
        f = new_gaussian([0.0], [[1.0]])
        g = new_gaussian([0.0, 0.0], np.eye(2))
        with pytest.raises(DimensionMismatch):
            log_likelihood_ratio(f, g, [0.0])

    def test_importance_identity(self):
        # E_g[f/g] = 1 for overlapping supports
        rng = np.random.default_rng(7)
        g = new_gaussian([0.0, 0.0], np.eye(2))
        f = new_gaussian([0.3, -0.2], random_spd(2, rng, 0.8) + 0.5 * np.eye(2))
        xs = sample(g, 200_000, rng)
        w = np.exp([log_likelihood_ratio(f, g, x) for x in xs])
        se = w.std(ddof=1) / np.sqrt(w.size)
        assert abs(w.mean() - 1.0) <= 3.0 * se

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_mahalanobis_rows_matches_scalar_calls(self, seed):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(1, 7))
        m = new_gaussian(rng.standard_normal(p), random_spd(p, rng))
        xs = rng.standard_normal((8, p))
        rows = mahalanobis_sq_rows(m, xs)
        singles = [mahalanobis_sq(m, x) for x in xs]
        assert np.allclose(rows, singles, rtol=1e-10, atol=1e-12)


class TestKL:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(1)
        m = new_gaussian(rng.standard_normal(3), random_spd(3, rng))
        assert kl_divergence(m, m) == 0.0

    def test_scalar_mean_shift(self):
        f = new_gaussian([1.0], [[1.0]])
        g = new_gaussian([0.0], [[1.0]])
        assert kl_divergence(f, g) == pytest.approx(0.5, rel=1e-12)

    def test_bivariate_variance_inflation(self):
        f = new_gaussian([0.0, 0.0], 2.0 * np.eye(2))
        g = new_gaussian([0.0, 0.0], np.eye(2))
        expected = 0.5 * (4.0 - 2.0 - 2.0 * np.log(2.0))
        assert kl_divergence(f, g) == pytest.approx(expected, rel=1e-12)

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = int(rng.integers(1, 9))
            f = new_gaussian(rng.standard_normal(p), random_spd(p, rng))
            g = new_gaussian(rng.standard_normal(p), random_spd(p, rng))
            assert kl_divergence(f, g) >= 0.0

    def test_noise_contracts_kl(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = int(rng.integers(1, 7))
            f = new_gaussian(rng.standard_normal(p), random_spd(p, rng))
            g = new_gaussian(rng.standard_normal(p), random_spd(p, rng))
            for s2 in (1e-3, 1e-2, 1e-1):
                assert kl_divergence(
                    encrypt_model(f, s2), encrypt_model(g, s2)
                ) <= kl_divergence(f, g) + 1e-10


class TestEncrypt:
    def test_diagonal_addition(self):
        m = new_gaussian([0.0, 0.0], np.eye(2))
        assert np.allclose(encrypt_model(m, 0.04).cov, 1.04 * np.eye(2))

    def test_off_diagonal_untouched(self):
        m = new_gaussian([0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]])
        assert np.allclose(encrypt_model(m, 1.0).cov, [[3.0, 1.0], [1.0, 3.0]])

    def test_mean_unchanged(self):
        m = new_gaussian([1.0, -2.0], np.eye(2))
        assert np.array_equal(encrypt_model(m, 0.5).mean, m.mean)

    def test_composition(self):
        rng = np.random.default_rng(4)
        m = new_gaussian(rng.standard_normal(3), random_spd(3, rng))
        twice = encrypt_model(encrypt_model(m, 0.3), 0.7)
        once = encrypt_model(m, 1.0)
        assert np.allclose(twice.cov, once.cov, atol=1e-15)

    def test_nonpositive_variance_raises(self):
        m = new_gaussian([0.0], [[1.0]])
        with pytest.raises(ValueError):
            encrypt_model(m, 0.0)


class TestConditional:
    def test_identity_independence(self):
        assert np.allclose(conditional_covariance(np.eye(3), BusPair(0, 1)), np.eye(2))
        assert conditional_correlation(np.eye(3), BusPair(0, 2)) == pytest.approx(0.0)

    def test_matches_precision_block_inverse(self):
        # Schur complement == inverse of the 2x2 precision block, all pairs
        rng = np.random.default_rng(5)
        for _ in range(10):
            cov = random_spd(6, rng)
            theta = np.linalg.inv(cov)
            for i in range(6):
                for k in range(i + 1, 6):
                    got = conditional_covariance(cov, BusPair(i, k))
                    want = np.linalg.inv(theta[np.ix_([i, k], [i, k])])
                    assert np.allclose(got, want, rtol=1e-8, atol=1e-10)

    def test_precision_zero_gives_zero_correlation(self):
        theta = np.eye(4)
        theta[0, 2] = theta[2, 0] = -0.4
        theta[1, 3] = theta[3, 1] = 0.0  # structural zero at (1, 3)
        theta[0, 1] = theta[1, 0] = -0.3
        cov = np.linalg.inv(theta)
        assert abs(conditional_correlation(cov, BusPair(1, 3))) < 1e-9
        assert abs(conditional_correlation(cov, BusPair(0, 2))) > 0.1

    def test_correlation_bounded(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            cov = random_spd(5, rng)
            i, k = sorted(rng.choice(5, size=2, replace=False).tolist())
            assert abs(conditional_correlation(cov, BusPair(i, k))) <= 1.0

    def test_too_small_matrix_raises(self):
        with pytest.raises(DimensionMismatch):
            conditional_covariance(np.eye(2), BusPair(0, 1))

    def test_out_of_range_pair_raises(self):
        with pytest.raises(DimensionMismatch):
            conditional_covariance(np.eye(4), BusPair(0, 7))

    def test_degenerate_variance_raises(self):
        cov = np.diag([1.0, 1e-16, 1.0])
        with pytest.raises(DegenerateVariance):
            conditional_correlation(cov, BusPair(0, 1))


class TestSampleFit:
    def test_seed_determinism(self):
        m = new_gaussian([0.0, 1.0], [[2.0, 1.0], [1.0, 2.0]])
        a = sample(m, 100, np.random.default_rng(9))
        b = sample(m, 100, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_sample_moments(self):
        m = new_gaussian([0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]])
        xs = sample(m, 100_000, np.random.default_rng(10))
        assert np.all(np.abs(xs.mean(axis=0)) < 0.02)
        assert np.allclose(np.cov(xs, rowvar=False), m.cov, atol=0.05)

    def test_sample_invalid_n(self):
        m = new_gaussian([0.0], [[1.0]])
        with pytest.raises(ValueError):
            sample(m, 0, np.random.default_rng(0))

    def test_fit_two_points(self):
        m = fit_gaussian(np.array([[0.0], [2.0]]))
        assert m.mean[0] == pytest.approx(1.0)
        assert m.cov[0, 0] == pytest.approx(2.0)  # unbiased divisor n - 1

    def test_fit_too_few_raises(self):
        with pytest.raises(InsufficientSamples):
            fit_gaussian(np.array([[1.0]]))

    def test_fit_constant_with_reg(self):
        m = fit_gaussian(np.ones((10, 2)), reg=1e-6)
        assert np.allclose(m.cov, 1e-6 * np.eye(2))

    def test_fit_recovers_parameters(self):
        rng = np.random.default_rng(11)
        true = new_gaussian([0.0, 0.0], np.eye(2))
        fitted = fit_gaussian(sample(true, 100_000, rng))
        assert np.all(np.abs(fitted.mean) < 0.05)
        assert np.allclose(fitted.cov, np.eye(2), atol=0.05)

    def test_trace_inverse(self):
        rng = np.random.default_rng(12)
        cov = random_spd(4, rng)
        m = new_gaussian(np.zeros(4), cov)
        assert trace_inverse(m) == pytest.approx(
            np.trace(np.linalg.inv(cov)), rel=1e-10
        )
