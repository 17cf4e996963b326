"""Unit tests for branch localization via conditional-correlation collapse."""

import numpy as np
import pytest

from outagekit import (
    BusPair,
    LocalizationConfig,
    build_scenario,
    bundled_topology,
    correlation_matrix,
    encrypt_model,
    estimate_post_covariance,
    localize,
    new_gaussian,
    sample,
)
from outagekit.errors import InsufficientSamples


def graphical_cov(p, edges, strength=0.45):
    """Covariance whose precision matrix has exactly the given edges."""
    theta = np.eye(p)
    for i, k in edges:
        theta[i, k] = theta[k, i] = -strength
    return np.linalg.inv(theta)


class TestConfig:
    def test_defaults(self):
        cfg = LocalizationConfig()
        assert cfg.delta_max == 0.5 and cfg.delta_min == 0.1 and cfg.window == 200

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            LocalizationConfig(delta_max=0.1, delta_min=0.5)
        with pytest.raises(ValueError):
            LocalizationConfig(delta_max=1.5)

    def test_window_floor(self):
        with pytest.raises(ValueError):
            LocalizationConfig(window=2)


class TestEstimatePostCovariance:
    def test_recovers_known_covariance(self):
        true = new_gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]])
        xs = sample(true, 100_000, np.random.default_rng(0))
        est = estimate_post_covariance(xs)
        assert np.allclose(est.cov, true.cov, atol=0.05)

    def test_too_small_window_raises(self):
        with pytest.raises(InsufficientSamples):
            estimate_post_covariance(np.zeros((4, 3)))  # needs p + 2 = 5

    def test_constant_columns_with_reg(self):
        est = estimate_post_covariance(np.ones((10, 3)), reg=1e-6)
        assert np.allclose(est.cov, 1e-6 * np.eye(3))


class TestCorrelationMatrix:
    def test_identity_covariance(self):
        out = correlation_matrix(np.eye(4))
        assert np.allclose(np.diag(out), 1.0)
        assert np.allclose(out - np.eye(4), 0.0)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 5))
        out = correlation_matrix(a @ a.T + 0.5 * np.eye(5))
        assert np.allclose(out, out.T, atol=1e-12)

    def test_precision_structure_recovered(self):
        cov = graphical_cov(5, [(0, 1), (1, 2), (2, 3), (3, 4)], strength=0.4)
        out = correlation_matrix(cov)
        for i, k in [(0, 1), (1, 2), (2, 3), (3, 4)]:
            assert out[i, k] > 0.1
        for i, k in [(0, 2), (0, 3), (0, 4), (1, 3), (1, 4), (2, 4)]:
            assert out[i, k] < 1e-6


class TestLocalize:
    def test_no_change_reports_nothing(self):
        cov = graphical_cov(4, [(0, 1), (1, 2), (2, 3)])
        assert localize(cov, cov).outaged == ()

    def test_single_dropped_edge(self):
        before = graphical_cov(4, [(0, 1), (1, 2), (2, 3)], strength=0.55)
        after = graphical_cov(4, [(1, 2), (2, 3)], strength=0.55)
        report = localize(before, after)
        assert [q.as_tuple() for q in report.outaged] == [(0, 1)]

    def test_two_dropped_edges(self):
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
        before = graphical_cov(6, edges, strength=0.52)
        after = graphical_cov(6, [(1, 2), (3, 4), (4, 5)], strength=0.52)
        report = localize(before, after)
        assert [q.as_tuple() for q in report.outaged] == [(0, 1), (2, 3)]

    def test_scale_invariance(self):
        before = graphical_cov(4, [(0, 1), (1, 2), (2, 3)], strength=0.55)
        after = graphical_cov(4, [(1, 2), (2, 3)], strength=0.55)
        base = localize(before, after).outaged
        scaled = localize(17.0 * before, 17.0 * after).outaged
        assert base == scaled

    def test_reported_pairs_recheckable_from_matrices(self):
        before = graphical_cov(5, [(0, 1), (1, 2), (2, 3), (3, 4)], strength=0.55)
        after = graphical_cov(5, [(1, 2), (3, 4)], strength=0.55)
        cfg = LocalizationConfig()
        report = localize(before, after, cfg=cfg)
        assert report.outaged  # nonempty by construction
        for q in report.outaged:
            i, k = q.as_tuple()
            assert report.correlations_before[i, k] > cfg.delta_max
            assert report.correlations_after[i, k] < cfg.delta_min

    def test_candidate_restriction(self):
        before = graphical_cov(4, [(0, 1), (1, 2), (2, 3)], strength=0.55)
        after = graphical_cov(4, [(1, 2), (2, 3)], strength=0.55)
        report = localize(before, after, candidates=[BusPair(2, 3)])
        assert report.outaged == ()

    def test_empty_candidates_raise(self):
        cov = graphical_cov(4, [(0, 1)])
        with pytest.raises(ValueError):
            localize(cov, cov, candidates=[])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            localize(np.eye(4), np.eye(5))

    def test_noise_subtraction_option(self):
        before = graphical_cov(4, [(0, 1), (1, 2), (2, 3)], strength=0.55)
        after = graphical_cov(4, [(1, 2), (2, 3)], strength=0.55)
        s2 = 0.01
        cfg = LocalizationConfig(subtract_noise_variance=s2)
        noisy_before = before + s2 * np.eye(4)
        noisy_after = after + s2 * np.eye(4)
        report = localize(noisy_before, noisy_after, cfg=cfg)
        assert [q.as_tuple() for q in report.outaged] == [(0, 1)]
        assert np.allclose(
            report.correlations_before, localize(before, after).correlations_before
        )


class TestGridScenario:
    def test_mesh_outage_signature_population(self):
        # The removed branch's model pair flips from strong conditional
        # correlation to near zero; no other pair passes both tests.
        scn = build_scenario(
            bundled_topology("mesh8"), [BusPair(4, 7)], rng=np.random.default_rng(11)
        )
        pre_e = encrypt_model(scn.pre_model, 4e-2)
        post_e = encrypt_model(scn.post_model, 4e-2)
        report = localize(pre_e.cov, post_e.cov)
        truth = [q.as_tuple() for q in scn.outaged_model_pairs]
        assert [q.as_tuple() for q in report.outaged] == truth
        i, k = truth[0]
        assert report.correlations_before[i, k] > 0.5
        assert report.correlations_after[i, k] < 0.1
