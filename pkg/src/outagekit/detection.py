"""Streaming Bayesian change-point detectors.

Four statistics over the same geometric-prior posterior-odds recursion:

* ``BENCHMARK``      - raw data, raw densities (no privacy, fastest detection)
* ``PRIVACY_ONLY``   - noisy data scored with the noise-added densities
* ``MITIGATED``      - noisy data scored with raw covariances plus an
  unbiased trace correction for the injected noise
* ``variance_scaled(gamma)`` - mitigated with the bias-corrected quadratic
  terms shrunk by 1/gamma to narrow the Jensen gap (gamma = 1 reduces
  exactly to ``MITIGATED``)

The recursion is `S_N = L_N (S_{N-1} + rho) / (1 - rho)` run in the log
domain; ``direct_statistic`` evaluates the defining O(N^2) double sum and
serves as the test oracle for the recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatch,
    EmptyStream,
    InvalidParameter,
    MissingMechanism,
)
from .gauss import (
    GaussianModel,
    log_likelihood_ratio,
    mahalanobis_sq,
    mahalanobis_sq_rows,
    trace_inverse,
)
from .privacy import PrivacyMechanism

# Log statistics are capped here after an alarm would already have fired;
# post-alarm magnitudes carry no meaning.
_LOG_STAT_CAP = 700.0


@dataclass(frozen=True)
class DetectorKind:
    """Which statistic a detector runs; ``gamma`` only matters when scaled."""

    name: str
    gamma: float = 1.0

    def __post_init__(self):
        if self.name not in ("benchmark", "privacy_only", "mitigated", "variance_scaled"):
            raise InvalidParameter(f"unknown detector kind {self.name!r}")
        if self.gamma < 1.0:
            raise InvalidParameter(f"gamma must be >= 1, got {self.gamma}")
        if self.name != "variance_scaled" and self.gamma != 1.0:
            raise InvalidParameter("gamma != 1 only applies to variance_scaled")

    @property
    def uses_noise_correction(self) -> bool:
        return self.name in ("mitigated", "variance_scaled")

    @property
    def label(self) -> str:
        if self.name == "variance_scaled":
            return f"variance_scaled(gamma={self.gamma:g})"
        return self.name


BENCHMARK = DetectorKind("benchmark")
PRIVACY_ONLY = DetectorKind("privacy_only")
MITIGATED = DetectorKind("mitigated")


def variance_scaled(gamma: float) -> DetectorKind:
    return DetectorKind("variance_scaled", gamma=float(gamma))


def threshold(rho: float, alpha: float) -> float:
    """Alarm threshold (1 - alpha) / (rho * alpha) on the posterior odds."""
    if not (0.0 < rho < 1.0):
        raise InvalidParameter(f"rho must be in (0, 1), got {rho}")
    if not (0.0 < alpha < 1.0):
        raise InvalidParameter(f"alpha must be in (0, 1), got {alpha}")
    return (1.0 - alpha) / (rho * alpha)


def mitigated_log_ratio(
    x_enc,
    pre: GaussianModel,
    post: GaussianModel,
    mech: PrivacyMechanism,
    gamma: float = 1.0,
) -> float:
    """Per-sample log factor of the noise-corrected statistic.

    ``pre``/``post`` are the raw-data models.  Each quadratic is evaluated
    at the noisy sample and debiased by ``sigma_e2 * tr(cov^{-1}) / 2``, the
    expectation of the noise contribution; only these bias-corrected terms
    are shrunk by ``1/gamma``, the determinant prefactor is not.
    """
    if gamma < 1.0:
        raise InvalidParameter(f"gamma must be >= 1, got {gamma}")
    if pre.dim != post.dim:
        raise DimensionMismatch(f"model dims differ: {pre.dim} vs {post.dim}")
    beta_pre = -0.5 * mahalanobis_sq(pre, x_enc) + 0.5 * mech.sigma_e2 * trace_inverse(pre)
    beta_post = -0.5 * mahalanobis_sq(post, x_enc) + 0.5 * mech.sigma_e2 * trace_inverse(post)
    return 0.5 * (pre.log_det - post.log_det) + (beta_post - beta_pre) / gamma


@dataclass
class DetectorState:
    """One streaming detector; single-owner mutable.

    ``pre``/``post`` are the raw-data models for ``benchmark``,
    ``mitigated`` and ``variance_scaled`` kinds, and the noise-added models
    for ``privacy_only``.  Noise-corrected kinds additionally require the
    mechanism that produced the stream.
    """

    kind: DetectorKind
    pre: GaussianModel
    post: GaussianModel
    rho: float
    alpha: float
    mech: PrivacyMechanism | None = None
    log_stat: float = field(default=-np.inf, init=False)
    n: int = field(default=0, init=False)

    def __post_init__(self):
        self.log_threshold = float(np.log(threshold(self.rho, self.alpha)))
        if self.pre.dim != self.post.dim:
            raise DimensionMismatch(
                f"model dims differ: {self.pre.dim} vs {self.post.dim}"
            )
        if self.kind.uses_noise_correction and self.mech is None:
            raise MissingMechanism(f"{self.kind.label} detector requires a mechanism")
        self._log_rho = float(np.log(self.rho))
        self._log_1m_rho = float(np.log1p(-self.rho))

    def sample_log_ratio(self, x) -> float:
        """Per-sample log factor L_n for this detector's kind."""
        if self.kind.uses_noise_correction:
            return mitigated_log_ratio(x, self.pre, self.post, self.mech, self.kind.gamma)
        return log_likelihood_ratio(self.post, self.pre, x)

    def step(self, x) -> tuple[float, bool]:
        """Advance one sample; returns (log statistic, alarm flag)."""
        log_l = self.sample_log_ratio(x)
        self.log_stat = log_l + np.logaddexp(self.log_stat, self._log_rho) - self._log_1m_rho
        if self.log_stat > _LOG_STAT_CAP:
            self.log_stat = _LOG_STAT_CAP
        if not np.isfinite(self.log_stat):
            raise FloatingPointError(f"log statistic became {self.log_stat} at n={self.n + 1}")
        self.n += 1
        return self.log_stat, self.log_stat >= self.log_threshold


def sample_log_ratios(
    kind: DetectorKind,
    pre: GaussianModel,
    post: GaussianModel,
    mech: PrivacyMechanism | None,
    stream,
) -> np.ndarray:
    """Per-sample log factors L_n for every row of ``stream`` at once."""
    stream = np.asarray(stream, dtype=float)
    if stream.ndim == 1:
        stream = stream[:, None]
    if stream.shape[0] == 0:
        raise EmptyStream("cannot score an empty stream")
    if pre.dim != post.dim:
        raise DimensionMismatch(f"model dims differ: {pre.dim} vs {post.dim}")
    det_term = 0.5 * (pre.log_det - post.log_det)
    q_pre = mahalanobis_sq_rows(pre, stream)
    q_post = mahalanobis_sq_rows(post, stream)
    if kind.uses_noise_correction:
        if mech is None:
            raise MissingMechanism(f"{kind.label} statistic requires a mechanism")
        beta_pre = -0.5 * q_pre + 0.5 * mech.sigma_e2 * trace_inverse(pre)
        beta_post = -0.5 * q_post + 0.5 * mech.sigma_e2 * trace_inverse(post)
        return det_term + (beta_post - beta_pre) / kind.gamma
    return det_term + 0.5 * (q_pre - q_post)


def log_stat_trajectory(
    kind: DetectorKind,
    pre: GaussianModel,
    post: GaussianModel,
    rho: float,
    mech: PrivacyMechanism | None,
    stream,
) -> np.ndarray:
    """Log statistic after each step, vectorizing the per-sample scoring.

    Equivalent to repeated :meth:`DetectorState.step` calls but computes all
    log factors in one pass; the O(N) scalar recursion then runs on floats.
    """
    if not (0.0 < rho < 1.0):
        raise InvalidParameter(f"rho must be in (0, 1), got {rho}")
    log_l = sample_log_ratios(kind, pre, post, mech, stream)
    log_rho = np.log(rho)
    log_1m_rho = np.log1p(-rho)
    out = np.empty(log_l.shape[0])
    log_stat = -np.inf
    for i in range(log_l.shape[0]):
        log_stat = log_l[i] + np.logaddexp(log_stat, log_rho) - log_1m_rho
        if log_stat > _LOG_STAT_CAP:
            log_stat = _LOG_STAT_CAP
        out[i] = log_stat
    return out


def first_crossing(trajectory: np.ndarray, log_threshold: float) -> int | None:
    """1-based index of the first trajectory value at/above the threshold."""
    hits = np.nonzero(np.asarray(trajectory) >= log_threshold)[0]
    return int(hits[0]) + 1 if hits.size else None


def step(d: DetectorState, x) -> tuple[float, bool]:
    """Function-call form of :meth:`DetectorState.step`."""
    return d.step(x)


@dataclass(frozen=True)
class StopReport:
    """Outcome of running a detector over a finite stream."""

    stopped: bool
    tau: int | None
    final_log_stat: float
    trajectory: np.ndarray | None = None


def run_sequence(d: DetectorState, stream, record_trajectory: bool = False) -> StopReport:
    """Feed rows through the detector until the first alarm or exhaustion.

    ``tau`` is 1-based: an alarm on the first row reports tau = 1.  The
    optional trajectory holds the log statistic for steps 1..min(tau, N).
    """
    stream = np.asarray(stream, dtype=float)
    if stream.ndim == 1:
        stream = stream[:, None]
    if stream.shape[0] == 0:
        raise EmptyStream("cannot run a detector on an empty stream")
    traj = [] if record_trajectory else None
    for idx in range(stream.shape[0]):
        log_stat, alarm = d.step(stream[idx])
        if traj is not None:
            traj.append(log_stat)
        if alarm:
            return StopReport(
                stopped=True,
                tau=idx + 1,
                final_log_stat=log_stat,
                trajectory=np.asarray(traj) if traj is not None else None,
            )
    return StopReport(
        stopped=False,
        tau=None,
        final_log_stat=d.log_stat,
        trajectory=np.asarray(traj) if traj is not None else None,
    )


def direct_statistic(
    kind: DetectorKind,
    pre: GaussianModel,
    post: GaussianModel,
    rho: float,
    mech: PrivacyMechanism | None,
    sequence,
) -> float:
    """Log statistic after the full sequence, via the literal double sum.

    Quadratic in N; intended as the brute-force oracle for the streaming
    recursion, not for production use.
    """
    sequence = np.asarray(sequence, dtype=float)
    if sequence.ndim == 1:
        sequence = sequence[:, None]
    n_total = sequence.shape[0]
    if n_total == 0:
        raise EmptyStream("cannot evaluate the statistic on an empty sequence")
    if n_total > 1000:
        raise InvalidParameter("direct sum limited to N <= 1000")
    if kind.uses_noise_correction and mech is None:
        raise MissingMechanism(f"{kind.label} statistic requires a mechanism")
    if kind.uses_noise_correction:
        log_l = np.array(
            [
                mitigated_log_ratio(row, pre, post, mech, kind.gamma)
                for row in sequence
            ]
        )
    else:
        log_l = np.array([log_likelihood_ratio(post, pre, row) for row in sequence])
    # suffix[k] = sum of log factors from k..N-1 (0-based)
    suffix = np.cumsum(log_l[::-1])[::-1]
    log_rho = np.log(rho)
    log_1m_rho = np.log1p(-rho)
    ks = np.arange(1, n_total + 1)
    terms = log_rho + (ks - 1 - n_total) * log_1m_rho + suffix
    return float(logsumexp(terms))


def add_lower_bound(alpha: float, rho: float, kl: float) -> float:
    """Asymptotic lower bound on the mean detection delay.

    |log alpha| / (-log(1 - rho) + kl); shrinking the KL raises the bound.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidParameter(f"alpha must be in (0, 1), got {alpha}")
    if not (0.0 < rho < 1.0):
        raise InvalidParameter(f"rho must be in (0, 1), got {rho}")
    if kl < 0:
        raise InvalidParameter(f"kl must be >= 0, got {kl}")
    return abs(np.log(alpha)) / (-np.log1p(-rho) + kl)
