"""Synthetic distribution-grid scenarios and streaming sequences.

A scenario is built by (1) loading a grid topology, (2) drawing
moment-matched synthetic load profiles, (3) pushing them through a
linearized power-flow model before and after removing the outaged
branches, and (4) fitting Gaussian models to the resulting voltage
increments.  Streams for the detectors are then drawn iid from those
fitted models: pre-change rows from the pre-outage model, post-change
rows from the post-outage one.

The flow solver is a linear sensitivity model (weighted-Laplacian
inverse), not an AC solver: downstream consumers only see the Gaussian
fits of the increments, so only the covariance structure matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DeadIsland,
    DisconnectedGraph,
    DuplicateBranch,
    InfeasibleMoments,
    InsufficientSamples,
    InvalidParameter,
    ParseError,
    SingularSystem,
    UnknownBranch,
)
from .gauss import BusPair, GaussianModel, fit_gaussian, new_gaussian, sample
from .privacy import PrivacyMechanism

#: Hourly diurnal factor shared by all buses; induces cross-bus load
#: correlation so the fitted covariance is non-diagonal.
DIURNAL_AMPLITUDE = 0.3

#: Hours per diurnal cycle of the synthetic profiles.
HOURS_PER_DAY = 24

#: Default peak DER injection (kW), half-sine between 06:00 and 18:00.
DEFAULT_DER_PEAK_KW = 0.5


@dataclass(frozen=True)
class LoadStats:
    """Target moments of the synthetic load distribution (kW)."""

    minimum: float
    maximum: float
    mean: float
    std: float
    skewness: float

    def __post_init__(self):
        if not (self.minimum <= self.mean <= self.maximum):
            raise ValueError("need minimum <= mean <= maximum")
        if self.std <= 0:
            raise ValueError(f"std must be > 0, got {self.std}")


#: Moments of the hourly residential smart-meter profiles the bundled
#: scenarios are matched to.
RESIDENTIAL_LOAD_STATS = LoadStats(
    minimum=-2.6040, maximum=26.6860, mean=0.8473, std=0.6387, skewness=1.7441
)


@dataclass(frozen=True)
class GridModel:
    """A distribution grid as a weighted graph; one bus is the slack."""

    buses: int
    slack: int
    branches: tuple[tuple[int, int, float], ...]
    ders: tuple[int, ...] = ()
    kind: str = "radial"

    def __post_init__(self):
        if self.kind not in ("radial", "mesh"):
            raise ParseError(f"kind must be 'radial' or 'mesh', got {self.kind!r}")
        if not (0 <= self.slack < self.buses):
            raise ParseError(f"slack bus {self.slack} out of range")
        seen = set()
        for i, k, y in self.branches:
            if not (0 <= i < self.buses and 0 <= k < self.buses) or i == k:
                raise ParseError(f"invalid branch ({i}, {k})")
            if y <= 0:
                raise ParseError(f"branch ({i}, {k}) has non-positive admittance {y}")
            key = (min(i, k), max(i, k))
            if key in seen:
                raise DuplicateBranch(f"branch ({i}, {k}) listed twice")
            seen.add(key)
        for d in self.ders:
            if not (0 <= d < self.buses):
                raise ParseError(f"DER bus {d} out of range")

    @property
    def non_slack(self) -> list[int]:
        return [b for b in range(self.buses) if b != self.slack]

    def has_branch(self, pair: BusPair) -> bool:
        key = pair.as_tuple()
        return any((min(i, k), max(i, k)) == key for i, k, _ in self.branches)


def _components(buses: int, branches) -> list[set[int]]:
    parent = list(range(buses))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, k, _ in branches:
        ra, rb = find(i), find(k)
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, set[int]] = {}
    for b in range(buses):
        groups.setdefault(find(b), set()).add(b)
    return list(groups.values())


def load_topology(path) -> GridModel:
    """Read and validate a topology JSON file.

    Schema: ``{"buses": int, "slack": int, "branches": [{"from": int,
    "to": int, "y": float}], "ders": [int]}`` with 0-based bus indices;
    an optional ``"kind"`` of ``radial`` or ``mesh`` (default radial).
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    try:
        branches = tuple(
            (int(b["from"]), int(b["to"]), float(b.get("y", 1.0)))
            for b in raw["branches"]
        )
        grid = GridModel(
            buses=int(raw["buses"]),
            slack=int(raw.get("slack", 0)),
            branches=branches,
            ders=tuple(int(d) for d in raw.get("ders", ())),
            kind=str(raw.get("kind", "radial")),
        )
    except (ParseError, DuplicateBranch):
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed topology file {path}: {exc}") from exc
    if len(_components(grid.buses, grid.branches)) != 1:
        raise DisconnectedGraph(f"topology in {path} is not connected")
    return grid


def bundled_topology(name: str) -> GridModel:
    """Load one of the packaged example grids: radial8, mesh8 or mesh16."""
    ref = resources.files("outagekit.topologies").joinpath(f"{name}.json")
    with resources.as_file(ref) as path:
        if not path.exists():
            raise ParseError(f"no bundled topology named {name!r}")
        return load_topology(path)


def _lognormal_shape_from_skewness(skewness: float) -> float:
    """Shape s of a log-normal with the given skewness (must be > 0)."""
    if skewness <= 0:
        raise InfeasibleMoments(f"log-normal skewness must be > 0, got {skewness}")
    target = skewness**2
    # (w + 2)^2 (w - 1) = skew^2 with w = exp(s^2), monotone in w > 1
    w = brentq(lambda w: (w + 2.0) ** 2 * (w - 1.0) - target, 1.0 + 1e-12, 1e6)
    return float(np.sqrt(np.log(w)))


def synth_load_profile(
    stats: LoadStats,
    n: int,
    buses: int,
    rng: np.random.Generator,
    diurnal_amplitude: float = 0.0,
) -> np.ndarray:
    """Draw an (n, buses) kW load matrix from a shifted log-normal.

    The log-normal shape is solved from the target skewness, the scale and
    shift from the target std and mean; draws are clipped to
    [minimum, maximum].  A positive ``diurnal_amplitude`` multiplies every
    row by a shared hourly sinusoid (this perturbs the marginal moments and
    is off by default).
    """
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}")
    s = _lognormal_shape_from_skewness(stats.skewness)
    w = np.exp(s**2)
    # E[LN] = exp(m + s^2/2), Var[LN] = E[LN]^2 (w - 1)
    scale_mean = stats.std / np.sqrt(w - 1.0)
    m = np.log(scale_mean) - s**2 / 2.0
    shift = stats.mean - scale_mean
    if shift < stats.minimum:
        raise InfeasibleMoments(
            "log-normal support starts below the stated minimum"
        )
    draws = shift + rng.lognormal(mean=m, sigma=s, size=(n, buses))
    np.clip(draws, stats.minimum, stats.maximum, out=draws)
    if diurnal_amplitude > 0:
        hours = np.arange(n) % HOURS_PER_DAY
        factor = 1.0 + diurnal_amplitude * np.sin(2.0 * np.pi * hours / HOURS_PER_DAY)
        draws *= factor[:, None]
    return draws


def der_profile(n: int, peak_kw: float = DEFAULT_DER_PEAK_KW) -> np.ndarray:
    """Half-sine daytime injection (kW), zero outside 06:00-18:00."""
    hours = np.arange(n) % HOURS_PER_DAY
    return peak_kw * np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)


def _sensitivity_blocks(grid: GridModel) -> list[tuple[list[int], np.ndarray]]:
    """Per-component (bus list, inverse reduced Laplacian) pairs.

    The component containing the slack uses it as reference; any other
    component must contain a DER bus (its lowest-index DER becomes the
    local reference), else the component is de-energized.
    """
    comps = _components(grid.buses, grid.branches)
    lap = np.zeros((grid.buses, grid.buses))
    for i, k, y in grid.branches:
        lap[i, i] += y
        lap[k, k] += y
        lap[i, k] -= y
        lap[k, i] -= y
    blocks = []
    for comp in comps:
        if grid.slack in comp:
            ref = grid.slack
        else:
            backed = sorted(set(comp) & set(grid.ders))
            if not backed:
                raise DeadIsland(
                    f"buses {sorted(comp)} are islanded without DER backing"
                )
            ref = backed[0]
        members = sorted(comp - {ref})
        if not members:
            blocks.append((members, np.empty((0, 0))))
            continue
        sub = lap[np.ix_(members, members)]
        try:
            inv = np.linalg.inv(sub)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"reduced Laplacian singular on {members}") from exc
        cond = np.linalg.cond(sub)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularSystem(f"reduced Laplacian ill-conditioned on {members}")
        blocks.append((members, inv))
    return blocks


#: Reactance-to-resistance proxy used for the reactive-power sensitivity.
_XR_RATIO = 0.5

#: System base power (kVA) converting kW loads to per-unit injections.
#: Chosen so bundled-scenario increment variances dominate the default
#: privacy noise variance; the noise-corrected detector's false-alarm
#: guarantee only holds when the noise does not swamp the signal.
_BASE_KVA = 0.25


def linearized_power_flow(
    grid: GridModel,
    loads: np.ndarray,
    power_factor_range: tuple[float, float] = (0.9, 1.0),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Voltage magnitudes (p.u.) under a linear sensitivity model.

    ``loads`` is (n, p - 1) kW over the non-slack buses in ascending bus
    order.  Each entry gets a random power factor from
    ``power_factor_range``; reactive power enters through a scaled copy of
    the same sensitivity matrix.  Reference buses stay at exactly 1.0 and
    voltage deviations are linear in the injections.
    """
    loads = np.asarray(loads, dtype=float)
    if loads.ndim != 2 or loads.shape[1] != grid.buses - 1:
        raise InvalidParameter(
            f"loads must be (n, {grid.buses - 1}), got shape {loads.shape}"
        )
    n = loads.shape[0]
    lo, hi = power_factor_range
    if not (0.0 < lo <= hi <= 1.0):
        raise InvalidParameter(f"bad power factor range ({lo}, {hi})")
    if rng is None:
        rng = np.random.default_rng(0)
    pf = rng.uniform(lo, hi, size=loads.shape)
    p_pu = loads / _BASE_KVA
    q_pu = p_pu * np.tan(np.arccos(pf))
    inj = p_pu + _XR_RATIO * q_pu

    col_of = {b: j for j, b in enumerate(grid.non_slack)}
    v = np.ones((n, grid.buses))
    for members, inv in _sensitivity_blocks(grid):
        if not members:
            continue
        cols = [col_of[b] for b in members]
        v[:, members] = 1.0 - inj[:, cols] @ inv.T
    return v


def apply_outage(grid: GridModel, branches: list[BusPair]) -> GridModel:
    """Remove branches from the grid; islanded buses must be DER-backed."""
    if not branches:
        raise InvalidParameter("outage must name at least one branch")
    keys = set()
    for pair in branches:
        if not grid.has_branch(pair):
            raise UnknownBranch(f"no branch between buses {pair.as_tuple()}")
        keys.add(pair.as_tuple())
    kept = tuple(
        (i, k, y)
        for i, k, y in grid.branches
        if (min(i, k), max(i, k)) not in keys
    )
    out = GridModel(
        buses=grid.buses, slack=grid.slack, branches=kept, ders=grid.ders, kind=grid.kind
    )
    # raises DeadIsland if any island lacks a DER
    _sensitivity_blocks(out)
    return out


@dataclass(frozen=True)
class GridScenario:
    """Topology plus fitted pre/post voltage-increment models."""

    grid_before: GridModel
    grid_after: GridModel
    pre_model: GaussianModel
    post_model: GaussianModel
    outaged_branches: tuple[BusPair, ...]
    meta: dict = field(default_factory=dict)

    @property
    def observed_buses(self) -> list[int]:
        """Bus ids behind each model coordinate (all buses except slack)."""
        return self.grid_before.non_slack

    def branch_to_model_pair(self, pair: BusPair) -> BusPair:
        """Map a branch between bus ids to model-coordinate indices."""
        lookup = {b: j for j, b in enumerate(self.observed_buses)}
        i, k = pair.as_tuple()
        if i not in lookup or k not in lookup:
            raise InvalidParameter(f"branch {pair.as_tuple()} touches the slack bus")
        return BusPair(lookup[i], lookup[k])

    @property
    def outaged_model_pairs(self) -> tuple[BusPair, ...]:
        return tuple(self.branch_to_model_pair(b) for b in self.outaged_branches)


def build_scenario(
    grid: GridModel,
    outage: list[BusPair],
    stats: LoadStats = RESIDENTIAL_LOAD_STATS,
    n_fit: int = 4000,
    rng: np.random.Generator | None = None,
    fit_reg: float = 1e-10,
    der_peak_kw: float = DEFAULT_DER_PEAK_KW,
) -> GridScenario:
    """Fit pre- and post-outage increment models for one outage spec.

    ``n_fit`` pre-outage and ``n_fit`` post-outage flow steps are simulated
    with independent load draws; the models are fit to the first
    differences of the voltage magnitudes at the non-slack buses.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_fit < 10 * grid.buses:
        raise InsufficientSamples(f"n_fit must be >= 10 p = {10 * grid.buses}")
    grid_after = apply_outage(grid, outage)

    def increments(g: GridModel) -> np.ndarray:
        loads = synth_load_profile(
            stats, n_fit + 1, g.buses - 1, rng, diurnal_amplitude=DIURNAL_AMPLITUDE
        )
        if g.ders:
            inj = der_profile(n_fit + 1, der_peak_kw)
            col_of = {b: j for j, b in enumerate(g.non_slack)}
            for d in g.ders:
                if d != g.slack:
                    loads[:, col_of[d]] -= inj
        v = linearized_power_flow(g, loads, rng=rng)
        x = np.diff(v, axis=0)
        return x[:, g.non_slack]

    pre_model = fit_gaussian(increments(grid), reg=fit_reg)
    post_model = fit_gaussian(increments(grid_after), reg=fit_reg)
    return GridScenario(
        grid_before=grid,
        grid_after=grid_after,
        pre_model=pre_model,
        post_model=post_model,
        outaged_branches=tuple(BusPair(*p.as_tuple()) for p in outage),
        meta={"n_fit": n_fit, "kind": grid.kind},
    )


def draw_changepoint(rho: float, rng: np.random.Generator) -> int:
    """Geometric change time on {1, 2, ...} with success probability rho."""
    if not (0.0 < rho < 1.0):
        raise InvalidParameter(f"rho must be in (0, 1), got {rho}")
    return int(rng.geometric(rho))


@dataclass(frozen=True)
class SequenceSpec:
    """How to draw one replication's stream."""

    lam: int | str = "draw"
    rho: float = 0.04
    n_post: int = 50
    coverage: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise InvalidParameter(f"rho must be in (0, 1), got {self.rho}")
        if self.n_post < 1:
            raise InvalidParameter(f"n_post must be >= 1, got {self.n_post}")
        if not (0.0 < self.coverage <= 1.0):
            raise InvalidParameter(f"coverage must be in (0, 1], got {self.coverage}")
        if self.lam != "draw" and (not isinstance(self.lam, int) or self.lam < 1):
            raise InvalidParameter(f"lam must be 'draw' or a positive int, got {self.lam}")


@dataclass(frozen=True)
class SequenceData:
    """One replication's streams, already restricted to observed columns."""

    raw: np.ndarray
    encrypted: np.ndarray | None
    lam: int
    observed: np.ndarray


def gen_sequence(
    scn: GridScenario,
    spec: SequenceSpec,
    mech: PrivacyMechanism | None = None,
    rng: np.random.Generator | None = None,
) -> SequenceData:
    """Draw (lam - 1) pre-change and n_post post-change rows.

    The encrypted stream adds iid noise when a mechanism is given.  With
    coverage < 1 a per-replication random subset of ceil(coverage * p)
    columns is kept in both streams (same subset for raw and encrypted).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    lam = draw_changepoint(spec.rho, rng) if spec.lam == "draw" else int(spec.lam)
    p = scn.pre_model.dim
    parts = []
    if lam > 1:
        parts.append(sample(scn.pre_model, lam - 1, rng))
    parts.append(sample(scn.post_model, spec.n_post, rng))
    raw = np.vstack(parts)
    encrypted = None
    if mech is not None:
        encrypted = raw + mech.sigma_e * rng.standard_normal(raw.shape)
    n_obs = int(np.ceil(spec.coverage * p))
    observed = np.sort(rng.choice(p, size=n_obs, replace=False))
    raw = raw[:, observed]
    if encrypted is not None:
        encrypted = encrypted[:, observed]
    return SequenceData(raw=raw, encrypted=encrypted, lam=lam, observed=observed)


def synthetic_change_models(
    p: int,
    base_var: float,
    var_ratio: float,
    rng: np.random.Generator,
    drift_matched: bool = True,
    shift_scale: float = 1.0,
) -> tuple[GaussianModel, GaussianModel]:
    """Random (pre, post) model pair for detector studies.

    The pre-change covariance has a random orientation with eigenvalues
    uniform in [0.5, 1.5] * base_var; the post-change covariance is the
    same matrix scaled by var_ratio.  A mean shift along a random direction
    completes the change.  With drift_matched (requires var_ratio < 1) the
    shift's Mahalanobis norm is set to p * (1 - var_ratio), which makes the
    expected per-sample log factor of the noise-corrected statistic equal
    to the KL rate of the raw likelihood ratio for every scaling gamma, so
    detector comparisons isolate the noise-variance effect; otherwise the
    shift has plain norm shift_scale * sqrt(base_var).
    """
    if p < 1:
        raise InvalidParameter(f"p must be >= 1, got {p}")
    if base_var <= 0:
        raise InvalidParameter(f"base_var must be > 0, got {base_var}")
    if var_ratio <= 0:
        raise InvalidParameter(f"var_ratio must be > 0, got {var_ratio}")
    if drift_matched and var_ratio >= 1:
        raise InvalidParameter("drift_matched requires var_ratio < 1")
    a = rng.standard_normal((p, p))
    q, _ = np.linalg.qr(a)
    eigs = rng.uniform(0.5, 1.5, size=p) * base_var
    cov0 = (q * eigs) @ q.T
    cov0 = 0.5 * (cov0 + cov0.T)
    pre = new_gaussian(np.zeros(p), cov0)
    u = rng.standard_normal(p)
    u /= np.linalg.norm(u)
    if drift_matched:
        # t^2 * u' cov0^{-1} u = p * (1 - var_ratio)
        w = np.linalg.solve(cov0, u)
        t = np.sqrt(p * (1.0 - var_ratio) / float(u @ w))
    else:
        t = shift_scale * np.sqrt(base_var)
    post = new_gaussian(t * u, var_ratio * cov0)
    return pre, post
