"""Command-line interface.

Subcommands: ``generate`` (build a scenario's fitted models), ``detect``
(run one detector over a stream CSV), ``evaluate`` (Monte Carlo),
``tradeoff`` (privacy accounting tables), ``localize`` (correlation test
from covariance CSVs), and ``coverage`` (partial-observability sweep).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .datagen import RESIDENTIAL_LOAD_STATS, build_scenario, bundled_topology, load_topology
from .detection import DetectorKind, DetectorState, run_sequence, threshold
from .errors import ConfigError, OutageKitError
from .gauss import BusPair, GaussianModel, encrypt_model, new_gaussian
from .harness import (
    ExperimentConfig,
    MonteCarloSummary,
    coverage_experiment,
    emit_results,
    parse_detector,
    run_monte_carlo,
    tradeoff_report,
)
from .localization import LocalizationConfig, localize
from .privacy import DEFAULT_SENSITIVITY, DEFAULT_SIGMA_E2, PrivacyMechanism

_EXIT_CONFIG = 2
_EXIT_NUMERICAL = 3


def _fail_config(msg: str):
    click.echo(f"configuration error: {msg}", err=True)
    sys.exit(_EXIT_CONFIG)


def _fail_numerical(msg: str):
    click.echo(f"numerical failure: {msg}", err=True)
    sys.exit(_EXIT_NUMERICAL)


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        _fail_config(f"cannot read config {path}: {exc}")


def _build_config(config, **overrides) -> ExperimentConfig:
    """Merge TOML file values with CLI flag overrides (flags win)."""
    data = _load_toml(config)
    merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    if "detectors" in merged:
        merged["detectors"] = tuple(
            d if isinstance(d, DetectorKind) else parse_detector(d)
            for d in merged["detectors"]
        )
    for key in ("alphas", "coverage", "outage"):
        if key in merged:
            merged[key] = tuple(merged[key])
    try:
        return ExperimentConfig(**merged)
    except (ConfigError, TypeError) as exc:
        _fail_config(str(exc))


def _write_json(data, out: str | None):
    text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


def _model_to_dict(m: GaussianModel) -> dict:
    return {"mean": m.mean.tolist(), "cov": m.cov.tolist()}


def _model_from_dict(data: dict) -> GaussianModel:
    return new_gaussian(np.asarray(data["mean"]), np.asarray(data["cov"]))


@click.group()
def main():
    """Privacy-preserving quickest line-outage detection toolkit."""


@main.command()
@click.option("--topology", required=True, help="Bundled name or topology JSON path.")
@click.option("--outage", nargs=2, type=int, required=True, help="Branch endpoints i k.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-fit", type=int, default=4000, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Output JSON path (stdout if omitted).")
def generate(topology, outage, seed, n_fit, out):
    """Fit pre/post voltage-increment models for one outage scenario."""
    try:
        path = Path(topology)
        grid = load_topology(path) if path.suffix == ".json" and path.exists() else bundled_topology(topology)
        scn = build_scenario(
            grid,
            [BusPair(*outage)],
            RESIDENTIAL_LOAD_STATS,
            n_fit=n_fit,
            rng=np.random.default_rng((seed, 0)),
        )
    except OutageKitError as exc:
        _fail_config(str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail_numerical(str(exc))
    _write_json(
        {
            "topology": topology,
            "outage": list(outage),
            "observed_buses": scn.observed_buses,
            "outaged_model_pairs": [list(q.as_tuple()) for q in scn.outaged_model_pairs],
            "pre_model": _model_to_dict(scn.pre_model),
            "post_model": _model_to_dict(scn.post_model),
        },
        out,
    )


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True), help="Scenario JSON from `generate`.")
@click.option("--stream", required=True, type=click.Path(exists=True), help="CSV of samples, one row per time step.")
@click.option("--detector", default="mitigated", show_default=True)
@click.option("--alpha", type=float, default=1e-2, show_default=True)
@click.option("--rho", type=float, default=0.04, show_default=True)
@click.option("--sigma-e2", type=float, default=DEFAULT_SIGMA_E2, show_default=True)
@click.option("--localization-window", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def detect(scenario_path, stream, detector, alpha, rho, sigma_e2, localization_window, out):
    """Run one detector over a recorded stream; print tau and localization."""
    try:
        kind = parse_detector(detector)
        data = json.loads(Path(scenario_path).read_text())
        pre = _model_from_dict(data["pre_model"])
        post = _model_from_dict(data["post_model"])
        rows = np.loadtxt(stream, delimiter=",", ndmin=2)
        mech = PrivacyMechanism(sigma_e2=sigma_e2)
        if kind.name == "privacy_only":
            pre_d, post_d = encrypt_model(pre, sigma_e2), encrypt_model(post, sigma_e2)
        else:
            pre_d, post_d = pre, post
        state = DetectorState(
            kind, pre_d, post_d, rho=rho, alpha=alpha,
            mech=mech if kind.uses_noise_correction else None,
        )
        report = run_sequence(state, rows, record_trajectory=True)
        result = {
            "detector": kind.label,
            "alpha": alpha,
            "rho": rho,
            "stopped": report.stopped,
            "tau": report.tau,
            "final_log_stat": report.final_log_stat,
            "log_threshold": float(np.log(threshold(rho, alpha))),
            "localized": None,
        }
        if report.stopped and report.tau is not None:
            window = rows[report.tau - 1 :][:localization_window]
            if window.shape[0] >= rows.shape[1] + 2:
                from .localization import estimate_post_covariance

                pre_e = encrypt_model(pre, sigma_e2)
                cfg = LocalizationConfig(
                    window=max(3, window.shape[0]),
                    reg=0.1 * float(np.mean(np.var(window, axis=0))),
                )
                est = estimate_post_covariance(window, reg=cfg.reg)
                loc = localize(pre_e.cov, est.cov, cfg=cfg)
                result["localized"] = [list(q.as_tuple()) for q in loc.outaged]
    except (OutageKitError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail_config(str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail_numerical(str(exc))
    _write_json(result, out)


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None, help="TOML config file.")
@click.option("--scenario", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--alpha", "alphas", type=float, multiple=True)
@click.option("--rho", type=float, default=None)
@click.option("--sigma-e2", type=float, default=None)
@click.option("--gamma", type=float, multiple=True, help="Add variance_scaled detectors with these gammas.")
@click.option("--reps", type=int, default=None)
@click.option("--n-jobs", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="json", show_default=True)
def evaluate(config, scenario, seed, alphas, rho, sigma_e2, gamma, reps, n_jobs, out, fmt):
    """Monte Carlo evaluation: ADD, FAR, and localization accuracy."""
    overrides = {
        "scenario": scenario,
        "seed": seed,
        "alphas": tuple(alphas) if alphas else None,
        "rho": rho,
        "sigma_e2": sigma_e2,
        "replications": reps,
        "n_jobs": n_jobs,
    }
    if gamma:
        overrides["detectors"] = tuple(
            [parse_detector("benchmark"), parse_detector("privacy_only")]
            + [parse_detector(f"variance_scaled:{g:g}") for g in gamma]
        )
    cfg = _build_config(config, **overrides)
    try:
        summary = run_monte_carlo(cfg)
    except OutageKitError as exc:
        _fail_config(str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail_numerical(str(exc))
    if out is None:
        _write_json(summary.to_dict(), None)
    else:
        emit_results(summary, out, fmt)


@main.command()
@click.option("--sigma-e2", type=float, multiple=True, default=(5e-3, 4e-2), show_default=True)
@click.option("--sensitivity", type=float, default=DEFAULT_SENSITIVITY, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def tradeoff(sigma_e2, sensitivity, out):
    """Privacy accounting: GDP parameter, trade-off curve, delta(epsilon)."""
    try:
        mechs = [PrivacyMechanism(sigma_e2=s, sensitivity=sensitivity) for s in sigma_e2]
        table = tradeoff_report(mechs)
    except (OutageKitError, ValueError) as exc:
        _fail_config(str(exc))
    _write_json(table, out)


@main.command("localize")
@click.option("--cov-before", required=True, type=click.Path(exists=True), help="Pre-outage covariance CSV.")
@click.option("--cov-after", required=True, type=click.Path(exists=True), help="Post-outage covariance CSV.")
@click.option("--delta-max", type=float, default=0.5, show_default=True)
@click.option("--delta-min", type=float, default=0.1, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def localize_cmd(cov_before, cov_after, delta_max, delta_min, out):
    """Correlation-collapse branch test from two covariance CSVs."""
    try:
        before = np.loadtxt(cov_before, delimiter=",", ndmin=2)
        after = np.loadtxt(cov_after, delimiter=",", ndmin=2)
        cfg = LocalizationConfig(delta_max=delta_max, delta_min=delta_min)
        report = localize(before, after, cfg=cfg)
    except (OutageKitError, ValueError) as exc:
        _fail_config(str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail_numerical(str(exc))
    _write_json(
        {
            "outaged": [list(q.as_tuple()) for q in report.outaged],
            "correlations_before": report.correlations_before.tolist(),
            "correlations_after": report.correlations_after.tolist(),
        },
        out,
    )


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--scenario", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--ratio", "ratios", type=float, multiple=True, default=(0.75, 0.875, 1.0), show_default=True)
@click.option("--out", type=click.Path(), default=None)
def coverage(config, scenario, seed, reps, ratios, out):
    """Partial-coverage sensitivity: ADD / FAR deltas vs full observability."""
    cfg = _build_config(config, scenario=scenario, seed=seed, replications=reps)
    try:
        table = coverage_experiment(cfg, tuple(ratios))
    except OutageKitError as exc:
        _fail_config(str(exc))
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail_numerical(str(exc))
    _write_json(table, out)


if __name__ == "__main__":
    main()
