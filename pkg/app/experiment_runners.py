import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from app.artifact_ops import (
    write_json,
    write_reports_json,
    write_table_csv,
    write_trajectory,
)
from app.core_types import (
    EstimateReport,
    Grid1D,
    ScalarField,
    Trajectory,
    combine_reports,
    l1_norm,
    lp_norm,
)
from app.csf_ops import (
    count_intersections,
    counts_non_increasing,
    flow_curve,
    flow_curves,
    local_gcsf_flow,
    min_distance,
)
from app.env import GCSF_JOBS, GCSF_TOL_SCALE
from app.estimate_ops import (
    SpikeFamilySpec,
    check_delayed_height,
    check_global_height,
    check_l1_separation,
    check_local_mass_height,
    check_lp_height,
    check_mass_drift,
    magic_time,
    separation_rate,
    sharpness_experiment,
    spike_trajectory,
    truncation_bound,
    truncation_level,
)
from app.exact_solutions import (
    angenent_oval_half_width,
    angenent_oval_profile,
    circle_radius,
    grim_reaper,
    grim_reaper_pair,
    grim_reaper_residual,
    oval_grim_reaper_shift,
    shrinking_circle,
)
from app.experiment_config import (
    ExperimentConfig,
    build_battery,
    build_bc,
    build_curve,
    build_curve_options,
    build_field,
    build_measure,
    build_snapshots,
    build_solver_options,
)
from app.experiment_constants import (
    KIND_DELAYED,
    KIND_HARNACK,
    KIND_INTERSECTIONS,
    KIND_LOCAL_GCSF,
    KIND_LP,
    KIND_MEASURE_FLOW,
    KIND_SEPARATION,
    KIND_SHARPNESS,
    KIND_SOLVE,
    KIND_VALIDATE_EXACT,
)
from app.gcsf_ops import (
    BC_DIRICHLET_ORACLE,
    BC_ZERO,
    BoundaryCondition,
    check_comparison,
    check_max_principle,
    max_error,
    observed_orders,
    pde_residual,
    sample_trajectory,
    solve,
)
from app.harnack_ops import (
    check_area_growth,
    check_area_rate,
    check_boundary_identities,
    check_boundary_left,
    check_boundary_right,
    check_gradient_bound,
    check_harnack,
    check_slope_bound,
)
from app.lab_errors import ConfigValidationError
from app.measure_ops import (
    check_dominated,
    check_dominating_growth,
    check_initial_trace,
    check_lp_growth,
    check_weak_gap,
    default_battery,
    flow_from_measure,
    strong_convergence_check,
    total_variation,
)

module_logger = logging.getLogger(__name__)


@dataclass
class ExperimentOutcome:
    name: str
    kind: str
    reports: List[EstimateReport]
    artifacts: List[str] = field(default_factory=list)
    # Reported, never asserted
    trends: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports if r.status != "inconclusive")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "passed": self.passed,
            "checks": [
                {"name": r.name, "status": r.status, "margin": r.to_dict()["margin"]}
                for r in self.reports
            ],
            "artifacts": self.artifacts,
            "trends": self.trends,
        }


Runner = Callable[..., ExperimentOutcome]

RUNNERS: Dict[str, Runner] = {}


def register_runner(kind: str) -> Callable[[Runner], Runner]:
    def register(fn: Runner) -> Runner:
        RUNNERS[kind] = fn
        return fn

    return register


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int = GCSF_JOBS,
    tol_scale: float = GCSF_TOL_SCALE,
    logger: logging.Logger = module_logger,
) -> ExperimentOutcome:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running {config.kind} experiment {config.name}")
    outcome = RUNNERS[config.kind](
        config, out_dir, jobs=jobs, tol_scale=tol_scale, logger=logger
    )
    reports_path = write_reports_json(out_dir / "reports.json", outcome.reports)
    outcome.artifacts.append(str(reports_path))
    for r in outcome.reports:
        logger.info(f"{config.name}: {r.name} {r.status} (margin {r.margin:.4g})")
    return outcome


# ----------------------------
# Helpers
# ----------------------------


def _labelled(report: EstimateReport, label: str) -> EstimateReport:
    return replace(report, name=f"{label}/{report.name}")


def _parallel(fn: Callable[[Any], Any], items: Sequence[Any], jobs: int) -> List[Any]:
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        return list(executor.map(fn, items))


def _label(spec: Dict[str, Any], default: str) -> str:
    return str(spec.get("label", spec.get("profile", default)))


def _checks(
    config: ExperimentConfig, table: Dict[str, Any], default: Iterable[str]
) -> List[str]:
    names = config.checks or list(default)
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigValidationError(
            f"Unknown checks for {config.kind}: {', '.join(unknown)}"
        )
    return names


def _zero_bc_solve(
    u0: ScalarField,
    t_end: float,
    snapshots: Sequence[float],
    solver: Dict[str, Any],
) -> Trajectory:
    opts = build_solver_options(
        solver, BoundaryCondition(BC_ZERO), snapshots, u0.grid.dx
    )
    return solve(u0, t_end, opts)


def _magic_snapshots(spec: Any, u0: ScalarField, t_end: float) -> Tuple[float, ...]:
    """{"magic_multiples": [...]} picks multiples of t* = ||u0||_1 / pi"""
    if isinstance(spec, dict) and "magic_multiples" in spec:
        t_star = magic_time(l1_norm(u0))
        return tuple(float(m) * t_star for m in spec["magic_multiples"])
    return build_snapshots(spec, t_end)


# ----------------------------
# Graphical solver
# ----------------------------


@register_runner(KIND_SOLVE)
def run_solve(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    if "oracle" in params:
        return _run_oracle_convergence(config, out_dir, jobs=jobs, logger=logger)
    if "initial" not in params:
        raise ConfigValidationError("solve config needs an initial field or an oracle")
    u0 = build_field(params["initial"], config.base_dir)
    t_end = float(params["t_end"])
    snapshots = build_snapshots(params.get("snapshots"), t_end)
    bc = build_bc(params.get("bc"))
    opts = build_solver_options(params.get("solver"), bc, snapshots, u0.grid.dx)
    traj = solve(u0, t_end, opts)
    artifacts = [str(write_trajectory(out_dir / "trajectory", traj))]
    reports = [check_max_principle(traj, tol_scale)]
    if "compare_with" in params:
        w0 = build_field(params["compare_with"], config.base_dir)
        other = solve(w0, t_end, opts)
        lower, upper = sorted(
            (traj, other), key=lambda tr: float(np.sum(tr.states[0].values))
        )
        reports.append(check_comparison(lower, upper, tol_scale))
    trends = {"pde_residual": pde_residual(traj) if len(traj) >= 3 else None}
    return ExperimentOutcome(config.name, config.kind, reports, artifacts, trends)


def _run_oracle_convergence(
    config: ExperimentConfig, out_dir: Path, *, jobs: int, logger: logging.Logger
) -> ExperimentOutcome:
    params = config.params
    if params["oracle"] != "grim-reaper":
        raise ConfigValidationError(f"Unknown oracle: {params['oracle']}")
    a, b = params.get("interval", (-0.9, 0.9))
    t_end = float(params["t_end"])
    n_values = [int(n) for n in params.get("n_values", (201, 401, 801))]
    bc = BoundaryCondition(BC_DIRICHLET_ORACLE, grim_reaper)

    def run(n: int) -> float:
        grid = Grid1D(a, b, n)
        u0 = ScalarField.from_function(grid, lambda x: grim_reaper(x, 0.0))
        opts = build_solver_options(params.get("solver"), bc, (), grid.dx)
        error = max_error(solve(u0, t_end, opts), grim_reaper)
        logger.info(f"Oracle run n={n}: max error {error:.3e}")
        return error

    errors = _parallel(run, n_values, jobs)
    orders = observed_orders(errors)
    rows = [
        (n, (b - a) / (n - 1), e, orders[k - 1] if k else "")
        for k, (n, e) in enumerate(zip(n_values, errors))
    ]
    table = write_table_csv(
        out_dir / "convergence.csv", ("n", "dx", "max_error", "order"), rows
    )
    min_order = float(params.get("min_order", 1.8))
    reports = [
        EstimateReport.from_margin(
            "observed-order", min(orders) - min_order, 0.0, orders=orders
        ),
        EstimateReport.from_margin(
            "finest-error",
            float(params.get("max_error", 1e-4)) - errors[-1],
            0.0,
            errors=errors,
        ),
    ]
    return ExperimentOutcome(config.name, config.kind, reports, [str(table)])


# ----------------------------
# Local GCSF and Harnack monitors
# ----------------------------

TrajectoryCheck = Callable[[Trajectory, Dict[str, Any], float], EstimateReport]

LOCAL_CHECKS: Dict[str, TrajectoryCheck] = {
    "harnack": lambda traj, p, ts: check_harnack(traj, ts),
    "boundary-identities": lambda traj, p, ts: check_boundary_identities(traj, ts),
    "boundary-left": lambda traj, p, ts: check_boundary_left(traj, ts),
    "boundary-right": lambda traj, p, ts: check_boundary_right(traj, ts),
    "area-rate": lambda traj, p, ts: check_area_rate(traj, ts),
    "gradient-bound": lambda traj, p, ts: check_gradient_bound(traj, ts),
    "area-growth": lambda traj, p, ts: check_area_growth(
        traj, tuple(p.get("area_t_range", (0.05, 0.3)))
    ),
    "slope-bound": lambda traj, p, ts: check_slope_bound(
        traj, float(p.get("delta", 1.0)), tol_scale=ts
    ),
}


def _local_runs(
    config: ExperimentConfig,
    specs: Sequence[Dict[str, Any]],
    checks: Sequence[str],
    out_dir: Path,
    jobs: int,
    tol_scale: float,
) -> Tuple[List[EstimateReport], List[str]]:
    params = config.params
    t_end = float(params["t_end"])
    snapshots = build_snapshots(params.get("snapshots"), t_end)
    curve = dict(params.get("curve", {}))
    h = curve.get("h")
    opts = build_curve_options(curve)

    def run(spec: Dict[str, Any]) -> Tuple[List[EstimateReport], List[str]]:
        label = _label(spec, "initial")
        u0 = build_field(spec, config.base_dir)
        fields, curves = local_gcsf_flow(u0, t_end, opts, snapshots, h)
        if "a_bar" in spec:
            fields = fields.with_meta(a_bar=float(spec["a_bar"]))
        artifacts = [
            str(write_trajectory(out_dir / label, fields, "field")),
            str(write_trajectory(out_dir / label, curves, "curve")),
        ]
        reports = [
            _labelled(LOCAL_CHECKS[name](fields, params, tol_scale), label)
            for name in checks
        ]
        return reports, artifacts

    reports, artifacts = [], []
    for r, a in _parallel(run, list(specs), jobs):
        reports.extend(r)
        artifacts.extend(a)
    return reports, artifacts


@register_runner(KIND_LOCAL_GCSF)
def run_local_gcsf(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    checks = _checks(config, LOCAL_CHECKS, ["area-growth"])
    reports, artifacts = _local_runs(
        config, [config.params["initial"]], checks, out_dir, jobs, tol_scale
    )
    return ExperimentOutcome(config.name, config.kind, reports, artifacts)


@register_runner(KIND_HARNACK)
def run_harnack(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    checks = _checks(
        config, LOCAL_CHECKS, ["harnack", "boundary-identities", "gradient-bound"]
    )
    logger.info(f"Harnack fleet of {len(config.params['initials'])} local flows")
    reports, artifacts = _local_runs(
        config, config.params["initials"], checks, out_dir, jobs, tol_scale
    )
    return ExperimentOutcome(config.name, config.kind, reports, artifacts)


# ----------------------------
# Height estimates
# ----------------------------

HEIGHT_CHECKS: Dict[str, TrajectoryCheck] = {
    "delayed-height": lambda traj, p, ts: check_delayed_height(
        traj, float(p.get("delta", 1.0)), x0=float(p.get("x0", 0.0)), tol_scale=ts
    ),
    "global-height": lambda traj, p, ts: check_global_height(traj, ts),
    "lp-height": lambda traj, p, ts: check_lp_height(traj, float(p.get("p", 2.0)), ts),
    "local-mass-height": lambda traj, p, ts: check_local_mass_height(
        traj, float(p.get("y", 0.0)), float(p.get("r", 1.0)), ts
    ),
    "slope-bound": lambda traj, p, ts: check_slope_bound(
        traj, float(p.get("delta", 1.0)), tol_scale=ts
    ),
}


def _spike_family(params: Dict[str, Any]) -> SpikeFamilySpec:
    family = params.get("family", {})
    try:
        return SpikeFamilySpec(
            n_values=tuple(int(n) for n in family.get("n_values", (4, 8, 16, 32, 64))),
            probe_times=tuple(float(t) for t in family.get("probe_times", ())),
            half_width=float(family.get("half_width", 8.0)),
            dx=float(family.get("dx", 0.002)),
            dt_max=float(family.get("dt_max", 0.002)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigValidationError(f"Bad spike family {family}: {e}")


@register_runner(KIND_DELAYED)
def run_delayed(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    checks = _checks(config, HEIGHT_CHECKS, [])
    if "family" in params:
        spec = _spike_family(params)
        runs = _parallel(
            lambda n: (f"n={n}", spike_trajectory(spec, n)), spec.n_values, jobs
        )
    elif "initial" in params:
        u0 = build_field(params["initial"], config.base_dir)
        t_end = float(params["t_end"])
        snapshots = _magic_snapshots(params.get("snapshots"), u0, t_end)
        t_end = max((t_end, *snapshots))
        runs = [("initial", _zero_bc_solve(u0, t_end, snapshots, params.get("solver")))]
    else:
        raise ConfigValidationError("delayed config needs a family or an initial field")
    reports, artifacts = [], []
    for label, traj in runs:
        artifacts.append(str(write_trajectory(out_dir / label, traj)))
        reports.extend(
            _labelled(HEIGHT_CHECKS[name](traj, params, tol_scale), label)
            for name in checks
        )
    return ExperimentOutcome(config.name, config.kind, reports, artifacts)


@register_runner(KIND_LP)
def run_lp(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    u0 = build_field(params["initial"], config.base_dir)
    t, p = float(params["t"]), float(params["p"])
    k = truncation_level(u0, t)
    norm_p = lp_norm(u0, p)
    logger.info(f"Truncation level k={k:.12g} at t={t}")
    reports = [
        EstimateReport.from_margin(
            "truncation-bound", truncation_bound(norm_p, p, t) - k, 0.0, k=k, p=p
        )
    ]
    if "expected_k" in params:
        reports.append(
            EstimateReport.from_margin(
                "truncation-level",
                float(params.get("k_tol", 1e-8)) - abs(k - float(params["expected_k"])),
                0.0,
                k=k,
            )
        )
    artifacts = []
    if "solve" in params:
        run = params["solve"]
        t_end = float(run.get("t_end", 1.0))
        snapshots = build_snapshots(run.get("snapshots"), t_end)
        traj = _zero_bc_solve(u0, t_end, snapshots, run.get("solver"))
        artifacts.append(str(write_trajectory(out_dir / "trajectory", traj)))
        reports.append(check_lp_height(traj, p, tol_scale))
    return ExperimentOutcome(
        config.name, config.kind, reports, artifacts, {"k": k, "norm_p": norm_p}
    )


@register_runner(KIND_SHARPNESS)
def run_sharpness(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    spec = _spike_family({"family": params})
    result = sharpness_experiment(
        spec,
        below=float(params.get("below", 0.1)),
        above=float(params.get("above", 2.0 / math.pi)),
    )
    table = write_table_csv(out_dir / "sharpness.csv", result.columns, result.table())
    trends = write_json(out_dir / "trends.json", result.trends)
    low = result.trends["heights_below"]
    if len(low) < 2:
        report = EstimateReport.inconclusive(
            "sharpness-monotone", 0.0, "fewer than two family members"
        )
    else:
        report = EstimateReport.from_margin(
            "sharpness-monotone",
            float(np.min(np.diff(low))),
            0.0,
            heights=low,
        )
    # The bound column only asserts where the delayed estimate applies
    applicable = [
        row for row in result.rows if row["passed_when_applicable"] is not None
    ]
    bound = EstimateReport.from_margin(
        "sharpness-bound",
        0.0 if all(row["passed_when_applicable"] for row in applicable) else -1.0,
        0.0,
        rows=len(applicable),
    )
    return ExperimentOutcome(
        config.name,
        config.kind,
        [report, bound],
        [str(table), str(trends)],
        result.trends,
    )


# ----------------------------
# Mass drift and separation
# ----------------------------


@register_runner(KIND_SEPARATION)
def run_separation(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    reports: List[EstimateReport] = []
    artifacts: List[str] = []
    trends: Dict[str, Any] = {}
    if "drift" in params:
        r, a = _drift_fleet(config, params["drift"], out_dir, jobs, tol_scale)
        reports.extend(r)
        artifacts.extend(a)
    if "grim_reaper_pair" in params:
        report, rate = _grim_reaper_pair(params["grim_reaper_pair"])
        reports.append(report)
        trends["grim_reaper_pair_rate"] = rate
    for k, pair in enumerate(params.get("solver_pairs", [])):
        reports.append(_solver_pair(config, pair, k, tol_scale))
    if not reports:
        raise ConfigValidationError(
            "separation config needs drift, grim_reaper_pair or solver_pairs"
        )
    return ExperimentOutcome(config.name, config.kind, reports, artifacts, trends)


def _drift_fleet(
    config: ExperimentConfig,
    spec: Dict[str, Any],
    out_dir: Path,
    jobs: int,
    tol_scale: float,
) -> Tuple[List[EstimateReport], List[str]]:
    t_end = float(spec.get("t_end", 0.5))
    snapshots = build_snapshots(spec.get("snapshots", {"count": 10}), t_end)
    support = tuple(spec.get("battery_support", (-1.0, 1.0)))
    levels = int(spec.get("battery_levels", 3))

    def run(initial: Dict[str, Any]) -> Tuple[List[EstimateReport], str]:
        label = _label(initial, "initial")
        u0 = build_field(initial, config.base_dir)
        traj = _zero_bc_solve(u0, t_end, snapshots, spec.get("solver"))
        battery = default_battery(support, levels)
        per_phi = [
            check_mass_drift(traj, phi.on_grid(traj.grid), tol_scale)
            for phi in battery.functions
        ]
        path = write_trajectory(out_dir / label, traj)
        return [_labelled(combine_reports("mass-drift", per_phi), label)], str(path)

    reports, artifacts = [], []
    for r, a in _parallel(run, spec.get("initials", []), jobs):
        reports.extend(r)
        artifacts.append(a)
    return reports, artifacts


def _grim_reaper_pair(spec: Dict[str, Any]) -> Tuple[EstimateReport, float]:
    """Separation rate of the flowed up/down Grim Reaper pair on (a, b)

    Both members are solved with oracle boundary values from the closed
    form, which also supplies the reference rate and the flow errors."""
    a, b = spec.get("interval", (-0.98, 0.98))
    grid = Grid1D(a, b, int(spec.get("n", 981)))
    times = [float(t) for t in spec.get("times", np.linspace(0.0, 1.0, 11))]
    gap = float(spec.get("gap", 0.0))
    flowed, closed_form = [], []
    for member in (0, 1):

        def exact(x, t, member=member):
            return grim_reaper_pair(x, t, gap)[member]

        bc = BoundaryCondition(BC_DIRICHLET_ORACLE, exact)
        opts = build_solver_options(spec.get("solver"), bc, times, grid.dx)
        flowed.append(solve(ScalarField(grid, exact(grid.nodes, 0.0)), times[-1], opts))
        closed_form.append(sample_trajectory(exact, grid, flowed[-1].times))
    rate = separation_rate(*flowed, (a, b))
    exact_rate = separation_rate(*closed_form, (a, b))
    lo, hi = spec.get("rate_range", (1.9 * math.pi, 2.0 * math.pi))
    slack = float(spec.get("relative_slack", 0.05))
    margin = min(rate - lo * (1.0 - slack), hi * (1.0 + slack) - rate)
    report = EstimateReport.from_margin(
        "grim-reaper-pair-rate",
        margin,
        0.0,
        rate=rate,
        exact_rate=exact_rate,
        rate_range=(lo, hi),
        flow_errors=[
            max_error(traj, lambda x, t, m=m: grim_reaper_pair(x, t, gap)[m])
            for m, traj in enumerate(flowed)
        ],
    )
    return report, rate


def _solver_pair(
    config: ExperimentConfig, spec: Dict[str, Any], k: int, tol_scale: float
) -> EstimateReport:
    first, second = (build_field(s, config.base_dir) for s in spec["initials"])
    t_end = float(spec.get("t_end", 0.5))
    snapshots = build_snapshots(spec.get("snapshots", {"count": 10}), t_end)
    traj1 = _zero_bc_solve(first, t_end, snapshots, spec.get("solver"))
    traj2 = _zero_bc_solve(second, t_end, snapshots, spec.get("solver"))
    report = check_l1_separation(
        traj1,
        traj2,
        float(spec.get("r", 1.0)),
        float(spec.get("R", 2.0)),
        p=float(spec.get("p", 1.0)),
        delta=float(spec.get("delta", 0.1)),
        tol_scale=tol_scale,
    )
    return _labelled(report, spec.get("label", f"pair-{k}"))


# ----------------------------
# Measures
# ----------------------------


@register_runner(KIND_MEASURE_FLOW)
def run_measure_flow(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    names = _checks(
        config,
        {n: None for n in MEASURE_CHECKS},
        ["cauchy", "weak-gap", "dominated", "dominating-growth"],
    )
    t_end = float(params["t_end"])
    snapshots = build_snapshots(params.get("snapshots"), t_end)
    reports, artifacts, trends = [], [], {}
    for k, spec in enumerate(params["measures"]):
        label = str(spec.get("label", f"measure-{k}"))
        nu = build_measure(spec, config.base_dir)
        flow = flow_from_measure(
            nu,
            t_end,
            params["epsilons"],
            cutoff_radius=params.get("cutoff_radius"),
            dx=params.get("dx"),
            dt_max=params.get("dt_max"),
            snapshot_times=snapshots,
            jobs=jobs,
        )
        battery = build_battery(params.get("battery"), nu)
        artifacts.append(str(write_trajectory(out_dir / label, flow.u, "u")))
        artifacts.append(str(write_trajectory(out_dir / label, flow.U, "U")))
        trends[label] = {
            "total_variation": total_variation(nu),
            "cauchy_distances": flow.cauchy.details.get("distances"),
        }
        for name in names:
            report = MEASURE_CHECKS[name](nu, flow, battery, params, tol_scale)
            reports.append(_labelled(report, label))
    return ExperimentOutcome(config.name, config.kind, reports, artifacts, trends)


def _dominated_all(flow, tol_scale: float) -> EstimateReport:
    return combine_reports(
        "dominated",
        [
            _labelled(check_dominated(u, U, tol_scale), f"epsilon={e}")
            for e, (u, U) in flow.flows.items()
        ],
    )


def _growth_interval(nu, params: Dict[str, Any]) -> Tuple[float, float]:
    if "growth_interval" in params:
        return tuple(params["growth_interval"])
    lo, hi = nu.support()
    return lo - 0.5, hi + 0.5


def _strong_convergence(nu, flow, params: Dict[str, Any], tol_scale: float):
    if nu.density is None:
        raise ConfigValidationError("strong-convergence needs a density part")
    region = tuple(params.get("region", nu.density.grid.span))
    return strong_convergence_check(
        flow.u, nu.density, region, float(params.get("p", 1.0)), nu, tol_scale
    )


MEASURE_CHECKS: Dict[str, Callable[..., EstimateReport]] = {
    "cauchy": lambda nu, flow, battery, p, ts: flow.cauchy,
    "weak-gap": lambda nu, flow, battery, p, ts: check_weak_gap(
        nu, flow.u, battery, flow.epsilon, ts
    ),
    "dominated": lambda nu, flow, battery, p, ts: _dominated_all(flow, ts),
    "dominating-growth": lambda nu, flow, battery, p, ts: check_dominating_growth(
        flow.U, nu, _growth_interval(nu, p), ts
    ),
    "initial-trace": lambda nu, flow, battery, p, ts: check_initial_trace(
        nu, flow.u, battery, flow.epsilon, ts
    ),
    "lp-growth": lambda nu, flow, battery, p, ts: check_lp_growth(
        flow.u, float(p.get("p", 2.0)), tol_scale=ts
    ),
    "strong-convergence": lambda nu, flow, battery, p, ts: _strong_convergence(
        nu, flow, p, ts
    ),
}


# ----------------------------
# Curve experiments
# ----------------------------


@register_runner(KIND_INTERSECTIONS)
def run_intersections(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    params = config.params
    t_end = float(params["t_end"])
    snapshots = build_snapshots(params.get("snapshots", {"count": 20}), t_end)
    opts = build_curve_options(params.get("curve"))

    def run(item: Tuple[int, Dict[str, Any]]) -> Tuple[EstimateReport, List[str]]:
        k, pair = item
        label = str(pair.get("label", f"pair-{k}"))
        curves = [build_curve(spec, config.base_dir) for spec in pair["curves"]]
        first, second = flow_curves(curves, t_end, opts, snapshots)
        rows, counts, distances = [], [], []
        for t, p, q in zip(first.times, first.states, second.states):
            counts.append(count_intersections(p, q))
            distances.append(min_distance(p, q))
            rows.append((float(t), counts[-1], distances[-1]))
        table = write_table_csv(
            out_dir / f"{label}.csv", ("t", "intersections", "min_distance"), rows
        )
        if pair.get("mode", "intersections") == "avoidance":
            report = EstimateReport.from_margin(
                "avoidance",
                min(distances) - float(pair.get("min_gap", 1e-9)),
                0.0,
                extinct_at=first.meta["extinct_at"],
            )
        else:
            monotone = counts_non_increasing(counts)
            expected = pair.get("expected_initial")
            matches = expected is None or counts[0] == int(expected)
            report = EstimateReport.from_margin(
                "intersection-monotone",
                0.0 if monotone and matches else -1.0,
                0.0,
                counts=counts,
                snapshots=len(counts),
            )
        return _labelled(report, label), [str(table)]

    reports, artifacts = [], []
    for report, paths in _parallel(run, list(enumerate(params["pairs"])), jobs):
        reports.append(report)
        artifacts.extend(paths)
    return ExperimentOutcome(config.name, config.kind, reports, artifacts)


# ----------------------------
# Exact solution suites
# ----------------------------


def _grim_reaper_suite(spec: Dict[str, Any], rng: np.random.Generator):
    x = rng.uniform(-0.99, 0.99, int(spec.get("samples", 10000)))
    t = float(rng.uniform(0.0, 1.0))
    worst = float(np.max(grim_reaper_residual(x, t)))
    return EstimateReport.from_margin(
        "grim-reaper-residual", float(spec.get("tol", 1e-9)) - worst, 0.0, t=t
    )


def _oval_suite(spec: Dict[str, Any], rng: np.random.Generator):
    """Finite-difference GCSF residual of the upper oval branch"""
    h = float(spec.get("h", 1e-3))
    worst = 0.0
    for s in spec.get("s_values", (-2.0, -1.0, -0.5)):
        w = 0.5 * angenent_oval_half_width(s)
        x = rng.uniform(-w, w, int(spec.get("samples", 200)))
        u = angenent_oval_profile(x, s)
        ut = (angenent_oval_profile(x, s + h) - angenent_oval_profile(x, s - h)) / (
            2.0 * h
        )
        right, left = angenent_oval_profile(x + h, s), angenent_oval_profile(x - h, s)
        ux = (right - left) / (2.0 * h)
        uxx = (right - 2.0 * u + left) / (h * h)
        worst = max(worst, float(np.max(np.abs(ut - uxx / (1.0 + ux * ux)))))
    return EstimateReport.from_margin(
        "angenent-oval-residual", float(spec.get("tol", 1e-4)) - worst, 0.0
    )


def _oval_grim_reaper_suite(spec: Dict[str, Any], rng: np.random.Generator):
    """Upper oval branch against the translated Grim Reaper as s -> -inf"""
    s = float(spec.get("s", -4.0))
    x = rng.uniform(-0.5, 0.5, int(spec.get("samples", 200)))
    shift = oval_grim_reaper_shift(s)
    worst = float(
        np.max(np.abs(angenent_oval_profile(x, s) + grim_reaper(x, 0.0, shift)))
    )
    return EstimateReport.from_margin(
        "oval-grim-reaper", float(spec.get("tol", 1e-6)) - worst, 0.0, s=s
    )


def _circle_suite(spec: Dict[str, Any], rng: np.random.Generator):
    """Polyline circle radius against sqrt(r0^2 - 2t)"""
    r0, t = float(spec.get("r0", 1.0)), float(spec.get("t", 0.375))
    circle = shrinking_circle((0.0, 0.0), r0, 0.0, int(spec.get("m", 512)))
    traj = flow_curve(circle, t, build_curve_options(spec.get("curve")))
    final = traj.states[-1]
    center = np.mean(final.vertices, axis=0)
    radius = float(np.mean(np.hypot(*(final.vertices - center).T)))
    exact = circle_radius(r0, t)
    error = abs(radius - exact) / exact
    return EstimateReport.from_margin(
        "circle-radius",
        float(spec.get("rel_tol", 1e-3)) - error,
        0.0,
        radius=radius,
        exact=exact,
        extinct_at=traj.meta["extinct_at"],
    )


EXACT_SUITES: Dict[str, Callable[..., EstimateReport]] = {
    "grim-reaper": _grim_reaper_suite,
    "angenent-oval": _oval_suite,
    "oval-grim-reaper": _oval_grim_reaper_suite,
    "circle": _circle_suite,
}


@register_runner(KIND_VALIDATE_EXACT)
def run_validate_exact(
    config: ExperimentConfig,
    out_dir: Path,
    *,
    jobs: int,
    tol_scale: float,
    logger: logging.Logger,
) -> ExperimentOutcome:
    suites = config.params["suites"]
    if isinstance(suites, list):
        suites = {name: {} for name in suites}
    unknown = [name for name in suites if name not in EXACT_SUITES]
    if unknown:
        raise ConfigValidationError(f"Unknown exact suites: {', '.join(unknown)}")
    rng = np.random.default_rng(config.seed)
    reports = []
    for name, spec in suites.items():
        logger.debug(f"Exact suite {name}")
        reports.append(EXACT_SUITES[name](spec, rng))
    return ExperimentOutcome(config.name, config.kind, reports)
