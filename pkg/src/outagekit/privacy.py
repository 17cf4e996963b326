"""Per-sample Gaussian randomization and its differential-privacy accounting.

The mechanism adds iid N(0, sigma_e2) noise to every coordinate of a
released vector.  Privacy is quantified through the Gaussian-DP parameter
mu = sensitivity / sigma_e, the associated type-I/type-II trade-off curve,
and the classic (epsilon, delta(epsilon)) conversion.  The KL-degradation
helpers quantify how much the same noise slows downstream change
detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DimensionMismatch, InvalidRange
from .gauss import GaussianModel, encrypt_model, kl_divergence

#: Operating point used throughout the bundled experiments: noise variance
#: 4e-2 (p.u.^2) against the 0 - 1.1 p.u. voltage operational range.
DEFAULT_SIGMA_E2 = 4e-2
DEFAULT_SENSITIVITY = 1.1


@dataclass(frozen=True)
class PrivacyMechanism:
    """Homoscedastic Gaussian noise with a known data sensitivity."""

    sigma_e2: float = DEFAULT_SIGMA_E2
    sensitivity: float = DEFAULT_SENSITIVITY

    def __post_init__(self):
        if self.sigma_e2 <= 0:
            raise ValueError(f"sigma_e2 must be > 0, got {self.sigma_e2}")
        if self.sensitivity <= 0:
            raise ValueError(f"sensitivity must be > 0, got {self.sensitivity}")

    @property
    def sigma_e(self) -> float:
        return float(np.sqrt(self.sigma_e2))


@dataclass(frozen=True)
class TradeoffCurve:
    """Sampled trade-off function T(alpha) for a Gaussian-DP parameter mu."""

    mu: float
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.alphas.tolist(), self.betas.tolist()))


def randomize(x, mech: PrivacyMechanism, rng: np.random.Generator) -> np.ndarray:
    """Release x + e with e ~ N(0, sigma_e2 I); the input is not modified."""
    x = np.asarray(x, dtype=float)
    return x + mech.sigma_e * rng.standard_normal(x.shape)


def gdp_parameter(mech: PrivacyMechanism) -> float:
    """Gaussian-DP parameter mu = sensitivity / sigma_e."""
    return mech.sensitivity / mech.sigma_e


def tradeoff_curve(mu: float, alphas) -> TradeoffCurve:
    """T(alpha) = Phi(Phi^{-1}(1 - alpha) - mu) on an ascending alpha grid."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or np.any(np.diff(alphas) < 0):
        raise ValueError("alphas must be a sorted ascending 1-d grid")
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise ValueError("alphas must lie in [0, 1]")
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    betas = norm.cdf(norm.ppf(1.0 - alphas) - mu)
    return TradeoffCurve(mu=float(mu), alphas=alphas, betas=betas)


def dp_delta(epsilon: float, mech: PrivacyMechanism) -> float:
    """delta(epsilon) of the mechanism.

    delta = Phi(-eps/mu + mu/2) - exp(eps) * Phi(-eps/mu - mu/2), evaluated
    with the exp folded into logcdf so large eps cannot overflow.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    mu = gdp_parameter(mech)
    first = norm.cdf(-epsilon / mu + mu / 2.0)
    second = np.exp(epsilon + norm.logcdf(-epsilon / mu - mu / 2.0))
    return float(np.clip(first - second, 0.0, 1.0))


def sensitivity_from_range(vmin: float, vmax: float) -> float:
    """Sensitivity of a single coordinate with operational range [vmin, vmax]."""
    if vmax <= vmin:
        raise InvalidRange(f"need vmax > vmin, got ({vmin}, {vmax})")
    return vmax - vmin


def kl_degradation(f: GaussianModel, g: GaussianModel, mech: PrivacyMechanism) -> float:
    """D(f||g) - D(f_e||g_e): the KL lost by releasing noisy data.

    Nonnegative for any SPD pair; values below -1e-10 would indicate a
    numerical fault and raise.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"model dims differ: {f.dim} vs {g.dim}")
    raw = kl_divergence(f, g)
    enc = kl_divergence(encrypt_model(f, mech.sigma_e2), encrypt_model(g, mech.sigma_e2))
    delta = raw - enc
    if delta < -1e-10:
        raise AssertionError(f"KL degradation evaluated to {delta}")
    return max(delta, 0.0)


def kl_degradation_upper_bound(
    f: GaussianModel, g: GaussianModel, mech: PrivacyMechanism
) -> float:
    """Eigenvalue-form upper bound on the KL degradation.

    (sigma_e2 / (2 nu0_min^2)) * (||mu0 - mu1||^2
        + p * (nu1_max - nu0_min)^2 / nu1_max)
    with nu0_min the smallest eigenvalue of the pre-change covariance and
    nu1_max the largest of the post-change covariance.  The dimension p
    plays the bound's constant factor.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"model dims differ: {f.dim} vs {g.dim}")
    nu0_min = float(np.linalg.eigvalsh(g.cov)[0])
    nu1_max = float(np.linalg.eigvalsh(f.cov)[-1])
    mean_gap = float(np.sum((g.mean - f.mean) ** 2))
    p = f.dim
    return (mech.sigma_e2 / (2.0 * nu0_min**2)) * (
        mean_gap + p * (nu1_max - nu0_min) ** 2 / nu1_max
    )
