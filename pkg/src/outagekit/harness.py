"""Monte Carlo evaluation harness.

Runs seeded replications of outage scenarios through the configured
detectors, aggregates delay / false-alarm / localization metrics, and
emits machine-readable result tables.  Per-replication random sources are
derived from (master seed, replication index), so the same configuration
yields identical results at any parallelism degree.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import (
    GridScenario,
    RESIDENTIAL_LOAD_STATS,
    build_scenario,
    bundled_topology,
    draw_changepoint,
    load_topology,
)
from .detection import (
    BENCHMARK,
    DetectorKind,
    MITIGATED,
    PRIVACY_ONLY,
    add_lower_bound,
    first_crossing,
    log_stat_trajectory,
    threshold,
    variance_scaled,
)
from .errors import ConfigError
from .gauss import BusPair, GaussianModel, encrypt_model, kl_divergence, new_gaussian, sample
from .localization import LocalizationConfig, estimate_post_covariance, localize
from .privacy import PrivacyMechanism, dp_delta, gdp_parameter, tradeoff_curve

try:  # optional parallel backend
    from joblib import Parallel, delayed

    _HAVE_JOBLIB = True
except ImportError:  # pragma: no cover - joblib is normally present
    _HAVE_JOBLIB = False


_RESULTS_SCHEMA_VERSION = 1

_CSV_FIELDS = [
    "detector",
    "alpha",
    "coverage",
    "replications",
    "far_empirical",
    "far_stderr",
    "add_mean",
    "add_stderr",
    "add_count",
    "never_alarm_count",
    "localization_accuracy",
]


def parse_detector(text: str) -> DetectorKind:
    """Parse 'benchmark' | 'privacy_only' | 'mitigated' | 'variance_scaled:G'."""
    text = text.strip()
    if ":" in text:
        name, _, arg = text.partition(":")
        if name.strip() != "variance_scaled":
            raise ConfigError(f"only variance_scaled takes a parameter, got {text!r}")
        try:
            gamma = float(arg)
        except ValueError as exc:
            raise ConfigError(f"bad gamma in {text!r}") from exc
        return variance_scaled(gamma)
    try:
        return DetectorKind(text)
    except Exception as exc:
        raise ConfigError(f"unknown detector {text!r}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of one Monte Carlo experiment.

    ``scenario`` is a bundled topology name (``radial8``, ``mesh8``,
    ``mesh16``) or a path to a topology JSON file; ``outage`` names the
    branch removed at the change point.
    """

    scenario: str = "mesh8"
    outage: tuple[int, int] = (4, 7)
    detectors: tuple[DetectorKind, ...] = (
        BENCHMARK,
        PRIVACY_ONLY,
        MITIGATED,
        variance_scaled(2.0),
        variance_scaled(3.0),
    )
    rho: float = 0.04
    alphas: tuple[float, ...] = (1e-2,)
    sigma_e2: float = 4e-2
    replications: int = 1000
    seed: int = 0
    coverage: tuple[float, ...] = (1.0,)
    n_post: int = 50
    run_localization: bool = True
    loc_window: int = 200
    loc_reg_fraction: float = 0.1
    n_jobs: int = 1
    keep_records: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not (0.0 < self.rho < 1.0):
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if not self.alphas:
            raise ConfigError("need at least one alpha")
        for a in self.alphas:
            if not (0.0 < a < 1.0):
                raise ConfigError(f"alpha must be in (0, 1), got {a}")
        if self.sigma_e2 <= 0:
            raise ConfigError(f"sigma_e2 must be > 0, got {self.sigma_e2}")
        if not self.coverage:
            raise ConfigError("need at least one coverage ratio")
        for c in self.coverage:
            if not (0.0 < c <= 1.0):
                raise ConfigError(f"coverage must be in (0, 1], got {c}")
        if self.n_post < 1:
            raise ConfigError(f"n_post must be >= 1, got {self.n_post}")
        if not self.detectors:
            raise ConfigError("need at least one detector")
        if self.loc_reg_fraction < 0:
            raise ConfigError("loc_reg_fraction must be >= 0")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "outage": list(self.outage),
            "detectors": [d.label for d in self.detectors],
            "rho": self.rho,
            "alphas": list(self.alphas),
            "sigma_e2": self.sigma_e2,
            "replications": self.replications,
            "seed": self.seed,
            "coverage": list(self.coverage),
            "n_post": self.n_post,
            "run_localization": self.run_localization,
            "loc_window": self.loc_window,
            "loc_reg_fraction": self.loc_reg_fraction,
            "keep_records": self.keep_records,
        }


@dataclass(frozen=True)
class MonteCarloSummary:
    """Aggregated experiment outcome plus optional per-replication records.

    Each row of ``rows`` is one detector x alpha x coverage cell with keys
    matching the CSV schema.  ``far_empirical`` is #{tau < lambda} /
    replications; ``add_mean`` averages tau - lambda over replications with
    tau >= lambda only (never-alarm replications are excluded from the
    delay average and count as non-false-alarm).
    """

    config: dict
    rows: tuple[dict, ...]
    records: tuple[dict, ...] = ()
    schema_version: int = _RESULTS_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "rows": list(self.rows),
            "records": list(self.records),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MonteCarloSummary":
        return cls(
            config=data["config"],
            rows=tuple(data["rows"]),
            records=tuple(data.get("records", ())),
            schema_version=data.get("schema_version", _RESULTS_SCHEMA_VERSION),
        )

    def row(self, detector: str, alpha: float, coverage: float = 1.0) -> dict:
        for r in self.rows:
            if (
                r["detector"] == detector
                and r["alpha"] == alpha
                and r["coverage"] == coverage
            ):
                return r
        raise KeyError(f"no row for ({detector}, {alpha}, {coverage})")


def load_scenario(cfg: ExperimentConfig) -> GridScenario:
    """Build the experiment's scenario deterministically from the config seed."""
    path = Path(cfg.scenario)
    if path.suffix == ".json" and path.exists():
        grid = load_topology(path)
    else:
        grid = bundled_topology(cfg.scenario)
    rng = np.random.default_rng((cfg.seed, 0))
    return build_scenario(grid, [BusPair(*cfg.outage)], RESIDENTIAL_LOAD_STATS, rng=rng)


def _marginal(m: GaussianModel, idx: np.ndarray) -> GaussianModel:
    return new_gaussian(m.mean[idx], m.cov[np.ix_(idx, idx)])


def _one_replication(
    rep: int,
    cfg: ExperimentConfig,
    scn: GridScenario,
    mech: PrivacyMechanism,
    loc_cfg: LocalizationConfig | None,
    truth: frozenset,
) -> dict:
    rng = np.random.default_rng((cfg.seed, 1, rep))
    lam = draw_changepoint(cfg.rho, rng)
    p = scn.pre_model.dim
    parts = []
    if lam > 1:
        parts.append(sample(scn.pre_model, lam - 1, rng))
    parts.append(sample(scn.post_model, cfg.n_post, rng))
    raw = np.vstack(parts)
    enc = raw + mech.sigma_e * rng.standard_normal(raw.shape)

    pre_e = encrypt_model(scn.pre_model, cfg.sigma_e2)
    post_e = encrypt_model(scn.post_model, cfg.sigma_e2)

    record: dict = {"rep": rep, "lam": lam, "taus": {}, "localized": None}
    for cov_ratio in cfg.coverage:
        n_obs = int(np.ceil(cov_ratio * p))
        observed = np.sort(rng.choice(p, size=n_obs, replace=False))
        full = n_obs == p
        models = {
            "raw": (
                (scn.pre_model, scn.post_model)
                if full
                else (_marginal(scn.pre_model, observed), _marginal(scn.post_model, observed))
            ),
            "enc": (
                (pre_e, post_e)
                if full
                else (_marginal(pre_e, observed), _marginal(post_e, observed))
            ),
        }
        raw_v = raw if full else raw[:, observed]
        enc_v = enc if full else enc[:, observed]
        for kind in cfg.detectors:
            if kind.name == "benchmark":
                pre, post = models["raw"]
                stream, m = raw_v, None
            elif kind.name == "privacy_only":
                pre, post = models["enc"]
                stream, m = enc_v, None
            else:
                pre, post = models["raw"]
                stream, m = enc_v, mech
            traj = log_stat_trajectory(kind, pre, post, cfg.rho, m, stream)
            taus = {}
            for alpha in cfg.alphas:
                log_thr = float(np.log(threshold(cfg.rho, alpha)))
                taus[repr(alpha)] = first_crossing(traj, log_thr)
            record["taus"].setdefault(repr(cov_ratio), {})[kind.label] = taus

    if loc_cfg is not None:
        window = sample(post_e, loc_cfg.window, rng)
        est = estimate_post_covariance(window, reg=loc_cfg.reg)
        report = localize(pre_e.cov, est.cov, cfg=loc_cfg)
        found = frozenset(q.as_tuple() for q in report.outaged)
        record["localized"] = sorted(list(q) for q in found)
        record["localization_hit"] = bool(found == truth)
    return record


def run_monte_carlo(cfg: ExperimentConfig) -> MonteCarloSummary:
    """Execute the configured replications and aggregate the summary."""
    scn = load_scenario(cfg)
    mech = PrivacyMechanism(sigma_e2=cfg.sigma_e2)
    loc_cfg = None
    if cfg.run_localization:
        post_e = encrypt_model(scn.post_model, cfg.sigma_e2)
        reg = cfg.loc_reg_fraction * float(np.mean(np.diag(post_e.cov)))
        loc_cfg = LocalizationConfig(window=cfg.loc_window, reg=reg)
    truth = frozenset(q.as_tuple() for q in scn.outaged_model_pairs)

    def job(rep: int) -> dict:
        return _one_replication(rep, cfg, scn, mech, loc_cfg, truth)

    if cfg.n_jobs != 1 and _HAVE_JOBLIB:
        records = Parallel(n_jobs=cfg.n_jobs)(
            delayed(job)(rep) for rep in range(cfg.replications)
        )
    else:
        records = [job(rep) for rep in range(cfg.replications)]
    records.sort(key=lambda r: r["rep"])

    reps = cfg.replications
    if cfg.run_localization:
        hits = sum(1 for r in records if r.get("localization_hit"))
        loc_acc = hits / reps
    else:
        loc_acc = None

    rows = []
    for cov_ratio in cfg.coverage:
        for kind in cfg.detectors:
            for alpha in cfg.alphas:
                taus = [
                    r["taus"][repr(cov_ratio)][kind.label][repr(alpha)] for r in records
                ]
                lams = [r["lam"] for r in records]
                false_alarms = sum(
                    1 for t, l in zip(taus, lams) if t is not None and t < l
                )
                never = sum(1 for t in taus if t is None)
                delays = np.array(
                    [t - l for t, l in zip(taus, lams) if t is not None and t >= l],
                    dtype=float,
                )
                far = false_alarms / reps
                far_se = float(np.sqrt(far * (1.0 - far) / reps))
                if delays.size:
                    add_mean = float(delays.mean())
                    add_se = float(delays.std(ddof=1) / np.sqrt(delays.size)) if delays.size > 1 else 0.0
                else:
                    add_mean = None
                    add_se = None
                if never > 0.01 * reps:
                    warnings.warn(
                        f"{kind.label} at alpha={alpha}, coverage={cov_ratio}: "
                        f"{never}/{reps} replications never alarmed",
                        stacklevel=2,
                    )
                rows.append(
                    {
                        "detector": kind.label,
                        "alpha": alpha,
                        "coverage": cov_ratio,
                        "replications": reps,
                        "far_empirical": far,
                        "far_stderr": far_se,
                        "add_mean": add_mean,
                        "add_stderr": add_se,
                        "add_count": int(delays.size),
                        "never_alarm_count": never,
                        "localization_accuracy": loc_acc,
                    }
                )
    return MonteCarloSummary(
        config=cfg.to_dict(),
        rows=tuple(rows),
        records=tuple(records) if cfg.keep_records else (),
    )


def asymptotic_delay_curve(cfg: ExperimentConfig) -> list[dict]:
    """Delay-over-|log alpha| ratios against the theoretical constant.

    Uses ``cfg.alphas`` as the grid (one shared set of replications; each
    alpha only moves the threshold).  The bound column is the constant
    1 / (-log(1 - rho) + KL(f || g)) of the scenario.
    """
    scn = load_scenario(cfg)
    kl = kl_divergence(scn.post_model, scn.pre_model)
    summary = run_monte_carlo(replace(cfg, run_localization=False))
    bound_ratio = 1.0 / (-np.log1p(-cfg.rho) + kl)
    out = []
    for alpha in cfg.alphas:
        for kind in cfg.detectors:
            row = summary.row(kind.label, alpha)
            add = row["add_mean"]
            out.append(
                {
                    "detector": kind.label,
                    "alpha": alpha,
                    "add_mean": add,
                    "ratio": None if add is None else float(add / abs(np.log(alpha))),
                    "bound_ratio": float(bound_ratio),
                    "bound_delay": float(add_lower_bound(alpha, cfg.rho, kl)),
                }
            )
    return out


def coverage_experiment(cfg: ExperimentConfig, ratios: tuple[float, ...]) -> list[dict]:
    """ADD / FAR deltas of partial data coverage against full coverage."""
    if 1.0 not in ratios:
        raise ConfigError("ratios must include the full-coverage baseline 1.0")
    summary = run_monte_carlo(
        replace(cfg, coverage=tuple(ratios), run_localization=False)
    )
    out = []
    for kind in cfg.detectors:
        for alpha in cfg.alphas:
            base = summary.row(kind.label, alpha, 1.0)
            for ratio in ratios:
                row = summary.row(kind.label, alpha, ratio)
                d_add = (
                    None
                    if row["add_mean"] is None or base["add_mean"] is None
                    else row["add_mean"] - base["add_mean"]
                )
                out.append(
                    {
                        "detector": kind.label,
                        "alpha": alpha,
                        "coverage": ratio,
                        "delta_add": d_add,
                        "delta_far": row["far_empirical"] - base["far_empirical"],
                        "add_stderr": row["add_stderr"],
                        "far_stderr": row["far_stderr"],
                    }
                )
    return out


def tradeoff_report(
    mechs,
    epsilons=(0.5, 1.0, 2.0, 4.0),
    type1=(0.01, 0.05, 0.1, 0.25, 0.5, 0.75),
) -> list[dict]:
    """Privacy accounting table: GDP parameter, trade-off points, delta(eps)."""
    out = []
    for mech in mechs:
        curve = tradeoff_curve(gdp_parameter(mech), np.asarray(type1, dtype=float))
        out.append(
            {
                "sigma_e2": mech.sigma_e2,
                "sensitivity": mech.sensitivity,
                "mu": float(gdp_parameter(mech)),
                "curve": [[float(a), float(b)] for a, b in curve.points],
                "delta": {repr(e): float(dp_delta(e, mech)) for e in epsilons},
            }
        )
    return out


def emit_results(summary: MonteCarloSummary, path, fmt: str = "json") -> None:
    """Write the summary as deterministic JSON or flat CSV."""
    path = Path(path)
    if fmt == "json":
        path.write_text(
            json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n"
        )
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
            writer.writeheader()
            for row in summary.rows:
                writer.writerow({k: row[k] for k in _CSV_FIELDS})
    else:
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
