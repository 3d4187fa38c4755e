from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from teich_recur.config import DEFAULT_DT, FD_STEP, get_settings
from teich_recur.exceptions import ConfigError
from teich_recur.models import DriftCondition, ExperimentKind, WalkConfig
from teich_recur.services.flat_surface import (
    TranslationSurface,
    apply_linear,
    enumerate_saddle_connections,
)
from teich_recur.services.hyperbolic import (
    Isometry2,
    PolarChange,
    circle_point,
    derivative_bound_report,
    distance,
    expansion_bound,
    interval_measure,
    polar_angle,
    polar_angle_derivative,
    polar_point,
    polar_radius,
    polar_radius_derivative,
    shadow_expansion_ratio,
)
from teich_recur.services.large_deviations import (
    deviation_rate,
    simulate_occupation_exceedance,
    simulate_sojourn_sequences,
)
from teich_recur.services.markov_drift import (
    FIXTURE_DRIFT,
    burn_in_steps,
    estimate_drift,
    fixture_chain,
    tightness_level,
    uniform_level,
    verify_hitting_bound,
)
from teich_recur.services.oracles import geodesic_matrices, oracle_for_surface
from teich_recur.services.parallel import seed_stream
from teich_recur.services.reports import SOJOURN_HEADER, sojourn_rows
from teich_recur.services.surface_io import load_surface
from teich_recur.services.walk_sim import (
    first_hit_tail,
    occupation_rate_crosscheck,
    run_flow_fan,
    run_walks,
    stationary_level,
    walk_chain,
    walk_return_tail,
    window_miss_curve,
)
from teich_recur.tails import parse_tail_spec

logger = logging.getLogger(__name__)

CURVE_HEADER = ["T", "fraction", "ci_lo", "ci_hi", "bound_overlay"]
SADDLE_HEADER = ["len", "hol_x", "hol_y", "start", "end"]
# full round-trip range; float64 reconstruction of the polar point degrades past t of about 6
ROUNDTRIP_STATED_T_MAX = 20.0


@dataclass(frozen=True)
class Option:
    key: str
    type: Callable[[str], Any]
    default: Any = None
    required: bool = False
    help: str = ""

    @property
    def flags(self) -> List[str]:
        dashed = "--" + self.key.replace("_", "-")
        plain = "--" + self.key
        return [dashed] if dashed == plain else [dashed, plain]

    def convert(self, raw: str) -> Any:
        try:
            return self.type(raw)
        except ValueError:
            raise ConfigError(f"invalid value {raw!r} for {self.key}", key=self.key)


@dataclass
class Outcome:
    header: List[str]
    rows: List[Sequence[Any]]
    summary: Dict[str, Any]
    checks: Dict[str, bool]
    plot_x: Optional[str] = None
    plot_columns: Sequence[str] = ()
    log_y: bool = True
    # name -> (header, rows), written beside the main table as <kind>_<name>.csv
    tables: Dict[str, Tuple[List[str], List[Sequence[Any]]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


Handler = Callable[[Dict[str, Any]], Outcome]


@dataclass
class Command:
    name: str
    kind: ExperimentKind
    handler: Handler
    options: List[Option]
    help: str = ""


COMMON_OPTIONS = [
    Option("surface", str, "torus", help="builtin surface name or surface file"),
    Option("out", str, "out", help="output directory"),
    Option("seed", int, 0, help="base seed of the counter-based streams"),
    Option("threads", int, None, help="worker threads (default: available CPUs)"),
]


class CommandRouter:
    """Collects experiment handlers by subcommand name."""

    def __init__(self) -> None:
        self.commands: Dict[str, Command] = {}

    def command(
        self,
        name: str,
        kind: ExperimentKind,
        options: Sequence[Option] = (),
        help: str = "",
    ) -> Callable[[Handler], Handler]:
        def decorator(fn: Handler) -> Handler:
            self.commands[name] = Command(name, kind, fn, list(options), help)
            return fn

        return decorator


router = CommandRouter()


def _optional_float(raw: str) -> Optional[float]:
    return None if raw.strip().lower() in ("", "none", "auto") else float(raw)


def _float_list(raw: str) -> List[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


def _walk_config(params: Dict[str, Any], l: float = 2.0, l0: float = 1.0) -> WalkConfig:
    return WalkConfig(
        tau=params.get("tau", params.get("walk_tau", 2.0)),
        delta=params["delta"],
        l=l,
        l0=l0,
        n_steps=params.get("n_steps", params.get("walk_steps", 400)),
        n_trials=params.get("n_trials", params.get("walk_trials", 16)),
        seed=params["seed"],
        dt=params.get("dt", DEFAULT_DT),
    )


def _pushed(surface: TranslationSurface, start_t: float) -> TranslationSurface:
    if start_t == 0.0:
        return surface
    return apply_linear(surface, Isometry2.geodesic(start_t))


def _resolve_level(params: Dict[str, Any], surface: TranslationSurface, percentile: float) -> float:
    if params.get("l") is not None:
        return params["l"]
    cfg = WalkConfig(
        tau=params["walk_tau"],
        delta=params["delta"],
        l=2.0,
        l0=1.0,
        n_steps=params["walk_steps"],
        n_trials=params["walk_trials"],
        seed=params["seed"],
    )
    level = stationary_level(surface, cfg, percentile, workers=params["threads"])
    logger.info("level l set to the %gth stationary percentile: %.6g", percentile, level)
    return level


def _curve_outcome(curve, summary: Dict[str, Any], checks: Dict[str, bool]) -> Outcome:
    summary.update(
        {
            "fitted_rate": curve.rate,
            "intercept": curve.intercept,
            "r_squared": curve.r_squared,
            "n_total": curve.n_total,
        }
    )
    return Outcome(
        header=CURVE_HEADER,
        rows=curve.rows(),
        summary=summary,
        checks=checks,
        plot_x="T",
        plot_columns=["fraction", "ci_lo", "ci_hi", "bound_overlay"],
    )


LEVEL_OPTIONS = [
    Option("l", _optional_float, None, help="level l (default: stationary percentile)"),
    Option("level_percentile", float, 90.0),
    Option("walk_tau", float, 2.0),
    Option("walk_steps", int, 400),
    Option("walk_trials", int, 16),
]

FAN_OPTIONS = [
    Option("delta", float, 0.5),
    Option("dt", float, DEFAULT_DT),
    Option("n_angles", int, 512),
    Option("start_t", float, 3.0, help="start from g_t applied to the surface"),
]


@router.command(
    "enumerate",
    ExperimentKind.ENUMERATE,
    options=[Option("L", float, required=True, help="length cutoff")],
    help="list saddle connections up to length L",
)
def enumerate_command(params: Dict[str, Any]) -> Outcome:
    surface = load_surface(params["surface"])
    connections = enumerate_saddle_connections(surface, params["L"])
    rows = [(sc.length, sc.holonomy[0], sc.holonomy[1], sc.start, sc.end) for sc in connections]
    summary = {
        "surface": surface.name,
        "L": params["L"],
        "count": len(connections),
        "genus": surface.genus,
        "budget": get_settings().budget,
    }
    checks = {"lengths_within_L": all(sc.length <= params["L"] + 1e-9 for sc in connections)}
    return Outcome(SADDLE_HEADER, rows, summary, checks)


@router.command(
    "walk",
    ExperimentKind.WALK_RETURN,
    options=[
        Option("tau", float, 2.0),
        Option("n_steps", int, 200),
        Option("n_trials", int, 256),
        Option("delta", float, 0.5),
        Option("start_t", float, 3.0),
        Option("c_tilde", float, 1.0, help="drift factor used in the shape-only overlay"),
        Option("b_tilde", float, 1.0),
    ]
    + LEVEL_OPTIONS,
    help="return of the random walk g_tau r_theta to {V <= l}",
)
def walk_command(params: Dict[str, Any]) -> Outcome:
    base = load_surface(params["surface"])
    l = _resolve_level(params, base, params["level_percentile"])
    cfg = _walk_config(params, l=l, l0=l / 2.0)
    walks = run_walks(_pushed(base, params["start_t"]), cfg, workers=params["threads"])

    factor = params["c_tilde"] * math.exp(-(1.0 - cfg.delta) * cfg.tau) + params["b_tilde"] / l
    curve = walk_return_tail(walks, l, factor if factor < 1.0 else None)
    trailing = np.concatenate([w.V_values[w.V_values.size // 2:] for w in walks])
    bounded = bool(trailing.mean() < 10.0 * np.percentile(trailing, 25.0))
    summary = {
        "surface": base.name,
        "l": l,
        "overlay_factor": factor,
        "trailing_mean_V": float(trailing.mean()),
        "trailing_q25_V": float(np.percentile(trailing, 25.0)),
        "truncated": sum(w.truncated for w in walks),
        "config": cfg.as_dict(),
    }
    checks = {"non_increasing": curve.is_non_increasing(), "stochastically_bounded": bounded}
    return _curve_outcome(curve, summary, checks)


@router.command(
    "fan",
    ExperimentKind.FAN,
    options=[Option("T", float, 5.0)] + FAN_OPTIONS,
    help="V along g_t r_theta q for a uniform fan of angles",
)
def fan_command(params: Dict[str, Any]) -> Outcome:
    base = load_surface(params["surface"])
    cfg = _walk_config(params)
    fan = run_flow_fan(
        _pushed(base, params["start_t"]), params["n_angles"], params["T"], cfg, workers=params["threads"]
    )
    rows = [
        (j, float(record.theta[0]), float(t), float(v), record.truncated)
        for j, record in enumerate(fan)
        for t, v in zip(record.times, record.V_values)
    ]
    initial = np.array([record.V_values[0] for record in fan])
    summary = {
        "surface": base.name,
        "n_angles": len(fan),
        "truncated": sum(record.truncated for record in fan),
        "V_start": float(initial[0]),
        "config": cfg.as_dict(),
    }
    checks = {"rotation_invariant_start": bool(np.allclose(initial, initial[0], rtol=1e-9, atol=0.0))}
    return Outcome(["angle_idx", "theta", "t", "V", "truncated"], rows, summary, checks)


@router.command(
    "first-hit",
    ExperimentKind.FIRST_HIT,
    options=[Option("T", float, 6.0), Option("min_r2", float, 0.8)] + FAN_OPTIONS + LEVEL_OPTIONS,
    help="fraction of angles not yet in {V <= l} by time T",
)
def first_hit_command(params: Dict[str, Any]) -> Outcome:
    base = load_surface(params["surface"])
    l = _resolve_level(params, base, params["level_percentile"])
    cfg = _walk_config(params)
    fan = run_flow_fan(
        _pushed(base, params["start_t"]), params["n_angles"], params["T"], cfg, workers=params["threads"]
    )
    curve = first_hit_tail(fan, l, delta=cfg.delta)
    summary: Dict[str, Any] = {"surface": base.name, "l": l, "config": cfg.as_dict(), "overlay": "shape-only"}
    checks = {
        "non_increasing": curve.is_non_increasing(),
        "decaying": bool(curve.rate is not None and curve.rate > 0.0),
        "fit_quality": bool(curve.r_squared is not None and curve.r_squared > params["min_r2"]),
    }
    if fan[0].V_values[0] > 2.0 * l:
        doubled = first_hit_tail(fan, 2.0 * l)
        summary["fitted_rate_double_l"] = doubled.rate
        checks["rate_monotone_in_l"] = bool(doubled.rate >= curve.rate)
    return _curve_outcome(curve, summary, checks)


@router.command(
    "window-miss",
    ExperimentKind.WINDOW_MISS,
    options=[Option("S", float, 1.0), Option("T", float, 4.0)] + FAN_OPTIONS + LEVEL_OPTIONS,
    help="fraction of angles avoiding {V <= l} on [S, S + T]",
)
def window_miss_command(params: Dict[str, Any]) -> Outcome:
    base = load_surface(params["surface"])
    l = _resolve_level(params, base, params["level_percentile"])
    cfg = _walk_config(params)
    fan = run_flow_fan(
        _pushed(base, params["start_t"]),
        params["n_angles"],
        params["S"] + params["T"],
        cfg,
        workers=params["threads"],
    )
    curve = window_miss_curve(fan, params["S"], l)
    first = first_hit_tail(fan, l)
    summary = {"surface": base.name, "l": l, "S": params["S"], "first_hit_rate": first.rate}
    return _curve_outcome(curve, summary, {"non_increasing": curve.is_non_increasing()})


@router.command(
    "occupation",
    ExperimentKind.OCCUPATION,
    options=[
        Option("T", float, 20.0),
        Option("lambda", float, 0.5),
        Option("l0", _optional_float, None, help="re-entry level (default: l / 2)"),
        Option("C_prime", float, 1.0, help="short outside sojourns merge below this"),
        Option("hysteresis_ratio", float, 1.5),
    ]
    + FAN_OPTIONS
    + LEVEL_OPTIONS,
    help="occupation tail of the fan against the large-deviation rate",
)
def occupation_command(params: Dict[str, Any]) -> Outcome:
    base = load_surface(params["surface"])
    l = _resolve_level(params, base, params["level_percentile"])
    l0 = params["l0"] if params["l0"] is not None else l / 2.0
    cfg = _walk_config(params)
    fan = run_flow_fan(
        _pushed(base, params["start_t"]), params["n_angles"], params["T"], cfg, workers=params["threads"]
    )
    report = occupation_rate_crosscheck(
        fan, l, l0, params["C_prime"], params["lambda"], min_ratio=params["hysteresis_ratio"]
    )
    curve = report.curve
    late = curve.times >= report.rate.T_min
    curve.bound_overlay = np.where(late, report.C * report.rate.gamma ** curve.times, np.nan)
    rows = [row[:4] + (None if math.isnan(row[4]) else row[4],) for row in curve.rows()]
    summary = dict(report.rate.as_report())
    summary.update(
        {
            "surface": base.name,
            "l": l,
            "l0": l0,
            "C": report.C,
            "n_checked": report.n_checked,
            "two_term_ok": report.two_term_ok,
            "n_sequences": report.n_sequences,
            "conditional_domination_checked": False,
        }
    )
    checks = {"gamma_below_one": report.rate.gamma < 1.0, "fitted_constant_positive": report.C > 0.0}
    outcome = _curve_outcome(curve, summary, checks)
    outcome.rows = rows
    outcome.tables["sojourns"] = (SOJOURN_HEADER, sojourn_rows(report.sequences))
    return outcome


@router.command(
    "drift-verify",
    ExperimentKind.DRIFT_VERIFY,
    options=[
        Option("chain", str, "fixture", help="fixture or walk"),
        Option("l", _optional_float, None),
        Option("start", int, 7, help="fixture start state"),
        Option("n_max", int, 50),
        Option("trials", int, 100_000),
        Option("c", float, FIXTURE_DRIFT.c),
        Option("b", float, FIXTURE_DRIFT.b),
        Option("eps", float, 0.1),
        Option("tau", float, 2.0),
        Option("delta", float, 0.5),
        Option("start_t", float, 4.0),
        Option("drift_samples", int, 2000),
    ],
    help="Monte-Carlo hitting times against (V/l)(c + b/l)^n",
)
def drift_verify_command(params: Dict[str, Any]) -> Outcome:
    workers = params["threads"]
    exact = None
    if params["chain"] == "fixture":
        finite = fixture_chain()
        chain = finite.as_chain_model()
        start: Any = params["start"]
        dc = DriftCondition(params["c"], params["b"])
        l = params["l"] if params["l"] is not None else 8.0
        exact = finite.exact_survival(start, l, params["n_max"])
        sup_on_level = float(finite.V[finite.V <= l].max())
    elif params["chain"] == "walk":
        surface = load_surface(params["surface"])
        oracle = oracle_for_surface(surface)
        chain = walk_chain(surface, params["tau"], params["delta"], oracle)
        starts = [
            oracle.advance(oracle.initial_state(), geodesic_matrices(t))
            for t in np.linspace(0.0, params["start_t"], 8)
        ]
        dc = estimate_drift(chain, starts, params["drift_samples"], params["seed"], workers=workers)
        start = starts[-1]
        l = params["l"] if params["l"] is not None else 2.0 * dc.critical_level
        sup_on_level = l
    else:
        raise ConfigError(f"unknown chain {params['chain']!r}", key="chain")

    report = verify_hitting_bound(
        chain, dc, l, start, params["n_max"], params["trials"], params["seed"], workers=workers
    )
    rows = [
        (
            row["n"],
            row["p_hat"],
            row["ci_lo"],
            row["ci_hi"],
            row["bound"],
            None if exact is None else float(exact[row["n"]]),
            row["pass"],
        )
        for row in report.rows()
    ]
    summary = {
        "chain": params["chain"],
        "c": dc.c,
        "b": dc.b,
        "b_prime": dc.b_prime,
        "l": l,
        "V_start": report.V_start,
        "burn_in_steps": burn_in_steps(report.V_start, dc),
        "tightness_level": tightness_level(sup_on_level, dc, params["eps"]),
        "uniform_level": uniform_level(dc, params["eps"]),
        "max_p_hat_minus_bound": float(np.max(report.counts.p_hat - report.bounds)),
    }
    checks = {"monte_carlo_within_bound": report.passed}
    if exact is not None:
        checks["exact_within_bound"] = bool(np.all(exact <= report.bounds + 1e-12))
    return Outcome(
        ["n", "p_hat", "ci_lo", "ci_hi", "bound", "exact", "pass"],
        rows,
        summary,
        checks,
        plot_x="n",
        plot_columns=["p_hat", "bound", "exact"],
    )


@router.command(
    "chernoff",
    ExperimentKind.CHERNOFF,
    options=[
        Option("eta", str, required=True, help="outside-time model, e.g. exp:1"),
        Option("xi", str, required=True, help="cycle-length model, e.g. det:2"),
        Option("lambda", float, required=True),
        Option("theta0", _optional_float, None),
        Option("n_sim", int, 10_000, help="simulated sojourn processes (0 disables)"),
        Option("T_values", _float_list, [50.0, 100.0, 200.0]),
        Option("n_export", int, 20, help="simulated sojourn sequences written to the sojourn table"),
    ],
    help="large-deviation rate for the occupation of alternating sojourns",
)
def chernoff_command(params: Dict[str, Any]) -> Outcome:
    eta = parse_tail_spec(params["eta"], key="eta")
    xi = parse_tail_spec(params["xi"], key="xi")
    rate = deviation_rate(eta, xi, params["lambda"], theta0=params["theta0"])
    T_grid = np.asarray(params["T_values"], dtype=float)
    bounds = np.array([rate.bound(float(T)) for T in T_grid])
    checks = {"gamma_below_one": rate.gamma < 1.0}
    if params["n_sim"] > 0:
        sim = simulate_occupation_exceedance(
            eta, xi, params["lambda"], T_grid, params["n_sim"], params["seed"], workers=params["threads"]
        )
        rows = [
            (float(T), float(f), float(lo), float(hi), float(bd))
            for T, f, lo, hi, bd in zip(T_grid, sim.fractions, sim.ci_lo, sim.ci_hi, bounds)
        ]
        checks["simulation_within_bound"] = bool(np.all(sim.ci_lo <= bounds))
    else:
        rows = [(float(T), None, None, None, float(bd)) for T, bd in zip(T_grid, bounds)]
    summary = dict(rate.as_report())
    summary.update({"theta0": rate.theta0, "eta": params["eta"], "xi": params["xi"], "lambda": params["lambda"]})
    outcome = Outcome(CURVE_HEADER, rows, summary, checks, plot_x="T", plot_columns=["fraction", "bound_overlay"])
    if params["n_export"] > 0:
        sequences = simulate_sojourn_sequences(eta, xi, float(T_grid.max()), params["n_export"], params["seed"])
        outcome.tables["sojourns"] = (SOJOURN_HEADER, sojourn_rows(sequences))
    return outcome


@router.command(
    "hyp-check",
    ExperimentKind.HYPERBOLIC_CHECK,
    options=[
        Option("t1", float, 15.0),
        Option("t2", float, 15.0),
        Option("eta", float, 0.05),
        Option("grid", int, 1024),
        Option("n_sets", int, 100),
        Option("n_roundtrip", int, 10_000),
        Option("t_max", float, 6.0, help="largest radius in the round-trip sample"),
    ],
    help="polar-coordinate identities, derivative window and shadow expansion",
)
def hyp_check_command(params: Dict[str, Any]) -> Outcome:
    rng = seed_stream(params["seed"], 0)
    n = params["n_roundtrip"]
    t1s = rng.uniform(0.1, params["t_max"], n)
    t2s = rng.uniform(0.1, params["t_max"], n)
    phis = rng.uniform(-math.pi, math.pi, n)
    roundtrip = 0.0
    deriv_err = 0.0
    for t1, t2, phi in zip(t1s, t2s, phis):
        pc = PolarChange(float(t1), float(t2))
        target = circle_point(pc.t1, pc.t2, float(phi))
        rebuilt = polar_point(polar_radius(pc, float(phi)), polar_angle(pc, float(phi)))
        roundtrip = max(roundtrip, distance(target, rebuilt))
        inner = float(phi) * 0.9 / 2.0
        h = FD_STEP
        fd_angle = (polar_angle(pc, inner + h) - polar_angle(pc, inner - h)) / (2.0 * h)
        fd_radius = (polar_radius(pc, inner + h) - polar_radius(pc, inner - h)) / (2.0 * h)
        pairs = (
            (fd_angle, polar_angle_derivative(pc, inner)),
            (fd_radius, polar_radius_derivative(pc, inner)),
        )
        for fd, exact in pairs:
            deriv_err = max(deriv_err, abs(fd - exact) / max(abs(exact), 1e-4))

    pc = PolarChange(params["t1"], params["t2"])
    window = derivative_bound_report(pc, params["eta"], params["grid"])
    phi_grid = np.linspace(-math.pi / 2.0, math.pi / 2.0, params["grid"])
    scaled = np.abs(polar_angle_derivative(pc, phi_grid)) * math.exp(pc.t1)

    set_rng = seed_stream(params["seed"], 1)
    limit = expansion_bound(params["eta"])
    worst_shadow = 0.0
    for _ in range(params["n_sets"]):
        k = int(set_rng.integers(1, 5))
        starts = set_rng.uniform(-math.pi / 2.0, math.pi / 2.0 - 0.2, k)
        widths = set_rng.uniform(0.0, 0.2, k)
        intervals = list(zip(starts, starts + widths))
        measure = interval_measure(intervals)
        if measure > 0.0:
            ratio = shadow_expansion_ratio(pc, intervals, params["eta"])
            worst_shadow = max(worst_shadow, ratio / (limit * measure))

    summary = {
        "roundtrip_max_distance": roundtrip,
        "roundtrip_t_range": [0.1, params["t_max"]],
        "roundtrip_covers_stated_range": params["t_max"] >= ROUNDTRIP_STATED_T_MAX,
        "derivative_max_rel_error": deriv_err,
        "window_lower_ratio": window.lower_ratio,
        "window_upper_ratio": window.upper_ratio,
        "window_holds": window.holds,
        "window_holds_stated": window.holds_stated,
        "window_worst_profile_ratio": window.worst_ratio,
        "shadow_worst_fraction_of_bound": worst_shadow,
        "expansion_bound": limit,
    }
    checks = {
        "roundtrip": roundtrip < 1e-8,
        "derivatives": deriv_err < 1e-4,
        "derivative_window": window.holds,
        "shadow_expansion": worst_shadow <= 1.0,
    }
    rows = list(zip(phi_grid.tolist(), scaled.tolist()))
    return Outcome(
        ["phi", "scaled_derivative"],
        rows,
        summary,
        checks,
        plot_x="phi",
        plot_columns=["scaled_derivative"],
        log_y=False,
    )
