"""Out-of-service branch identification from conditional correlations.

A disconnected branch leaves a signature in the covariance of voltage
increments: the conditional correlation of its two endpoint buses, given
all other buses, drops from a clearly nonzero value to near zero.  A pair
(i, k) is reported when |rho_before| > delta_max and |rho_after| <
delta_min.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InsufficientSamples
from .gauss import BusPair, GaussianModel, conditional_correlation, fit_gaussian


@dataclass(frozen=True)
class LocalizationConfig:
    """Thresholds and estimation knobs for the correlation test.

    ``delta_max`` is the pre-outage branch-presence threshold, ``delta_min``
    the post-outage absence threshold (defaults from real-world outage
    calibration); ``window`` is the number of post-alarm samples used to
    estimate the post-outage covariance.
    """

    delta_max: float = 0.5
    delta_min: float = 0.1
    window: int = 200
    reg: float = 0.0
    subtract_noise_variance: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.delta_min < self.delta_max <= 1.0):
            raise ValueError(
                f"need 0 <= delta_min < delta_max <= 1, got "
                f"({self.delta_min}, {self.delta_max})"
            )
        if self.window < 3:
            raise ValueError(f"window must be >= 3, got {self.window}")


@dataclass(frozen=True)
class LocalizationReport:
    """Pairs passing both threshold tests, plus the full correlation maps."""

    outaged: tuple[BusPair, ...]
    correlations_before: np.ndarray = field(repr=False)
    correlations_after: np.ndarray = field(repr=False)


def estimate_post_covariance(samples, reg: float = 0.0) -> GaussianModel:
    """Fit the post-outage model from a post-alarm sample window (w >= p + 2)."""
    samples = np.asarray(samples, dtype=float)
    w, p = samples.shape
    if w < p + 2:
        raise InsufficientSamples(f"need at least p + 2 = {p + 2} samples, got {w}")
    return fit_gaussian(samples, reg=reg)


def correlation_matrix(cov: np.ndarray) -> np.ndarray:
    """Absolute conditional correlation for every bus pair; diagonal set to 1."""
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[0]
    out = np.eye(p)
    for i, k in combinations(range(p), 2):
        r = abs(conditional_correlation(cov, BusPair(i, k)))
        out[i, k] = r
        out[k, i] = r
    return out


def localize(
    cov_before: np.ndarray,
    cov_after: np.ndarray,
    candidates: list[BusPair] | None = None,
    cfg: LocalizationConfig = LocalizationConfig(),
) -> LocalizationReport:
    """Report every candidate pair whose correlation collapsed across the outage.

    ``candidates=None`` tests all pairs.  An empty report is a valid
    outcome (alarm without a localizable branch).  When
    ``cfg.subtract_noise_variance`` is positive, that much is removed from
    both covariance diagonals before the correlations are computed
    (deconvolution of the privacy noise; off by default).
    """
    cov_before = np.asarray(cov_before, dtype=float)
    cov_after = np.asarray(cov_after, dtype=float)
    if cov_before.shape != cov_after.shape:
        raise ValueError(
            f"covariance shapes differ: {cov_before.shape} vs {cov_after.shape}"
        )
    p = cov_before.shape[0]
    if cfg.subtract_noise_variance > 0:
        eye = cfg.subtract_noise_variance * np.eye(p)
        cov_before = cov_before - eye
        cov_after = cov_after - eye
    before = correlation_matrix(cov_before)
    after = correlation_matrix(cov_after)
    if candidates is None:
        candidates = [BusPair(i, k) for i, k in combinations(range(p), 2)]
    if not candidates:
        raise ValueError("candidates must be nonempty")
    hits = []
    for pair in sorted(candidates, key=lambda q: q.as_tuple()):
        i, k = pair.as_tuple()
        if before[i, k] > cfg.delta_max and after[i, k] < cfg.delta_min:
            hits.append(BusPair(i, k))
    return LocalizationReport(
        outaged=tuple(hits),
        correlations_before=before,
        correlations_after=after,
    )
