"""Multivariate Gaussian models for streaming voltage-increment data.

Everything downstream (detection statistics, privacy accounting,
localization) consumes the :class:`GaussianModel` built here.  All
likelihood arithmetic is done in the log domain and all linear solves go
through the cached Cholesky factor; explicit matrix inversion is
deliberately absent from this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    InsufficientSamples,
    NotPositiveDefinite,
)

_LOG_2PI = float(np.log(2.0 * np.pi))

# Scale-aware jitter used when a factorization fails on first attempt.
_AUTO_REG_SCALE = 1e-9


@dataclass(frozen=True)
class GaussianModel:
    """Immutable multivariate normal with cached Cholesky factor.

    Attributes
    ----------
    mean : (p,) array
        Mean vector (per-unit voltage increments in grid scenarios).
    cov : (p, p) array
        Symmetric positive-definite covariance.
    chol : (p, p) array
        Lower-triangular factor with ``chol @ chol.T == cov``.
    log_det : float
        ``log |cov|``, computed from the factor diagonal.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)
    log_det: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaussianModel):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(
            self.cov, other.cov
        )

    def __hash__(self):
        return hash((self.mean.tobytes(), self.cov.tobytes()))


@dataclass(frozen=True)
class BusPair:
    """An unordered pair of bus indices (i, k), i != k."""

    i: int
    k: int

    def __post_init__(self):
        if self.i == self.k:
            raise DimensionMismatch(f"bus pair needs distinct indices, got ({self.i}, {self.k})")

    def as_tuple(self) -> tuple[int, int]:
        return (min(self.i, self.k), max(self.i, self.k))


def _try_cholesky(cov: np.ndarray) -> np.ndarray | None:
    try:
        return cholesky(cov, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    except ValueError:
        return None


def new_gaussian(mean, cov, reg: float = 0.0) -> GaussianModel:
    """Build a model from ``mean`` and ``cov``, adding ``reg * I`` before factorizing.

    If the (regularized) covariance fails to factorize, one retry is made
    with scale-aware jitter ``1e-9 * trace(cov) / p``; a second failure
    raises :class:`NotPositiveDefinite`.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")
    p = mean.shape[0]
    if cov.shape != (p, p):
        raise DimensionMismatch(f"cov shape {cov.shape} incompatible with mean of length {p}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefinite("covariance is not symmetric")
    work = cov + reg * np.eye(p) if reg > 0 else cov
    chol = _try_cholesky(work)
    if chol is None:
        jitter = _AUTO_REG_SCALE * np.trace(np.abs(work)) / p
        chol = _try_cholesky(work + jitter * np.eye(p))
        if chol is None:
            raise NotPositiveDefinite("covariance is not positive definite after regularization")
        work = work + jitter * np.eye(p)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    work = np.ascontiguousarray(work)
    work.setflags(write=False)
    mean.setflags(write=False)
    chol.setflags(write=False)
    return GaussianModel(mean=mean, cov=work, chol=chol, log_det=log_det)


def _check_dim(m: GaussianModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.dim:
        raise DimensionMismatch(f"x has dim {x.shape[-1]}, model has dim {m.dim}")
    return x


def mahalanobis_sq(m: GaussianModel, x) -> float:
    """(x - mean)^T cov^{-1} (x - mean) via triangular solve."""
    x = _check_dim(m, x)
    z = solve_triangular(m.chol, x - m.mean, lower=True, check_finite=False)
    return float(z @ z)


def mahalanobis_sq_rows(m: GaussianModel, xs) -> np.ndarray:
    """Squared Mahalanobis distance of each row of ``xs``; shape (n,)."""
    xs = _check_dim(m, np.atleast_2d(np.asarray(xs, dtype=float)))
    z = solve_triangular(m.chol, (xs - m.mean).T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", z, z)


def log_density(m: GaussianModel, x) -> float:
    """Log density of ``m`` at ``x``."""
    return -0.5 * (mahalanobis_sq(m, x) + m.log_det + m.dim * _LOG_2PI)


def log_likelihood_ratio(f: GaussianModel, g: GaussianModel, x) -> float:
    """log f(x) - log g(x)."""
    if f.dim != g.dim:
        raise DimensionMismatch(f"model dims differ: {f.dim} vs {g.dim}")
    return log_density(f, x) - log_density(g, x)


def kl_divergence(f: GaussianModel, g: GaussianModel) -> float:
    """Closed-form Gaussian KL divergence D(f || g), clamped at zero.

    Tiny negatives above -1e-12 (floating-point noise) clamp to 0.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"model dims differ: {f.dim} vs {g.dim}")
    p = f.dim
    # tr(Sigma_g^{-1} Sigma_f) via the factor of g
    w = solve_triangular(g.chol, f.chol, lower=True, check_finite=False)
    trace_term = float(np.sum(w * w))
    z = solve_triangular(g.chol, g.mean - f.mean, lower=True, check_finite=False)
    quad_term = float(z @ z)
    val = 0.5 * (trace_term + quad_term - p + g.log_det - f.log_det)
    if val < 0:
        if val < -1e-12 * max(1.0, abs(g.log_det) + abs(f.log_det) + trace_term):
            raise AssertionError(f"KL divergence evaluated to {val}")
        val = 0.0
    return val


def trace_inverse(m: GaussianModel) -> float:
    """tr(cov^{-1}) via the inverse factor."""
    inv_l = solve_triangular(
        m.chol, np.eye(m.dim), lower=True, check_finite=False
    )
    return float(np.sum(inv_l * inv_l))


def encrypt_model(m: GaussianModel, sigma_e2: float) -> GaussianModel:
    """Model of noise-added data: same mean, covariance + sigma_e2 * I."""
    if sigma_e2 <= 0:
        raise ValueError(f"sigma_e2 must be > 0, got {sigma_e2}")
    return new_gaussian(m.mean, m.cov + sigma_e2 * np.eye(m.dim))


def conditional_covariance(cov: np.ndarray, pair: BusPair) -> np.ndarray:
    """2x2 conditional covariance of the pair given all other coordinates.

    Schur complement ``S_II - S_IK S_KK^{-1} S_IK^T`` with the K-block
    solved through its Cholesky factor.
    """
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[0]
    if cov.shape != (p, p) or p < 3:
        raise DimensionMismatch(f"need square cov with p >= 3, got shape {cov.shape}")
    i, k = pair.i, pair.k
    if not (0 <= i < p and 0 <= k < p):
        raise DimensionMismatch(f"pair ({i}, {k}) out of range for p={p}")
    idx_i = [i, k]
    idx_k = [j for j in range(p) if j != i and j != k]
    s_ii = cov[np.ix_(idx_i, idx_i)]
    s_ik = cov[np.ix_(idx_i, idx_k)]
    s_kk = cov[np.ix_(idx_k, idx_k)]
    chol_kk = _try_cholesky(s_kk)
    if chol_kk is None:
        jitter = _AUTO_REG_SCALE * np.trace(np.abs(s_kk)) / len(idx_k)
        chol_kk = _try_cholesky(s_kk + jitter * np.eye(len(idx_k)))
        if chol_kk is None:
            raise NotPositiveDefinite("conditioning block is numerically singular")
    sol = cho_solve((chol_kk, True), s_ik.T, check_finite=False)
    return s_ii - s_ik @ sol


def conditional_correlation(cov: np.ndarray, pair: BusPair) -> float:
    """Conditional correlation of a bus pair given the rest of the grid."""
    c = conditional_covariance(cov, pair)
    d0, d1 = c[0, 0], c[1, 1]
    if d0 < 1e-14 or d1 < 1e-14:
        raise DegenerateVariance(f"conditional variances too small: {d0}, {d1}")
    rho = float(c[0, 1] / np.sqrt(d0 * d1))
    return float(np.clip(rho, -1.0, 1.0))


def sample(m: GaussianModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """n iid draws, rows of an (n, p) matrix; deterministic given the rng state."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    z = rng.standard_normal((n, m.dim))
    return m.mean + z @ m.chol.T


def fit_gaussian(samples: np.ndarray, reg: float = 0.0) -> GaussianModel:
    """Sample mean and unbiased (n-1) covariance, plus ``reg * I``."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise DimensionMismatch(f"expected an (n, p) matrix, got shape {samples.shape}")
    n = samples.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return new_gaussian(mean, cov, reg=reg)
