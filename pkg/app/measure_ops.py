import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from app.artifact_ops import read_field_csv
from app.core_types import (
    EstimateReport,
    Grid1D,
    Interval,
    ScalarField,
    Trajectory,
    combine_reports,
    l1_norm,
    lp_norm,
    sample_linear,
    trajectory_tolerance,
)
from app.env import GCSF_JOBS, GCSF_TOL_SCALE
from app.estimate_ops import mollifier
from app.gcsf_ops import BC_ZERO, BoundaryCondition, SolverOptions, padded_grid, solve
from app.lab_errors import DomainError, MeasureValidationError

logger = logging.getLogger(__name__)

SINGULAR_KINDS = ("cantor", "staircase")

# Successive flows must at least halve their distance per epsilon step
CAUCHY_RATIO = 0.5

# Samples per linear piece when integrating a CDF against a test function
_CDF_SAMPLES = 1 << 14

# ----------------------------
# Measure types
# ----------------------------


@dataclass(frozen=True)
class SingularCDF:
    kind: str
    depth: int = 12
    support: Tuple[float, float] = (0.0, 1.0)
    mass: float = 1.0
    sign: int = 1
    # (x, F) pairs for staircase CDFs, linearly interpolated
    breakpoints: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in SINGULAR_KINDS:
            raise MeasureValidationError(f"Unknown singular kind: {self.kind}")
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        object.__setattr__(
            self,
            "breakpoints",
            tuple((float(x), float(f)) for x, f in self.breakpoints),
        )
        if self.kind == "cantor":
            a, b = self.support
            if not b > a:
                raise MeasureValidationError(f"Empty Cantor support {self.support}")
            if self.depth < 1:
                raise MeasureValidationError(f"Cantor depth {self.depth} < 1")
            if self.sign not in (-1, 1) or self.mass < 0:
                raise MeasureValidationError("Cantor parts need sign +-1, mass >= 0")
        else:
            if len(self.breakpoints) < 2:
                raise MeasureValidationError("Staircase needs at least 2 breakpoints")
            xs, fs = np.array(self.breakpoints).T
            if np.any(np.diff(xs) <= 0.0):
                raise MeasureValidationError("Staircase breakpoints must be sorted")
            steps = np.diff(fs)
            if np.any(steps > 0.0) and np.any(steps < 0.0):
                raise MeasureValidationError("Staircase CDF must be monotone")

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """F(x), zero left of the support"""
        x = np.asarray(x, dtype=float)
        if self.kind == "cantor":
            a, b = self.support
            y = np.clip((x - a) / (b - a), 0.0, 1.0)
            return self.sign * self.mass * cantor_function(y, self.depth)
        xs, fs = np.array(self.breakpoints).T
        return np.interp(x, xs, fs - fs[0])

    def total_variation(self) -> float:
        if self.kind == "cantor":
            return self.mass
        fs = np.array(self.breakpoints)[:, 1]
        return float(abs(fs[-1] - fs[0]))

    def span(self) -> Interval:
        if self.kind == "cantor":
            return self.support
        return self.breakpoints[0][0], self.breakpoints[-1][0]

    def absolute(self) -> "SingularCDF":
        if self.kind == "cantor":
            return SingularCDF("cantor", self.depth, self.support, self.mass, 1)
        fs = np.array(self.breakpoints)
        fs[:, 1] = np.abs(fs[:, 1] - fs[0, 1])
        return SingularCDF("staircase", breakpoints=tuple(map(tuple, fs)))


@dataclass(frozen=True)
class RadonMeasureSpec:
    density: Optional[ScalarField] = None
    singular: Tuple[SingularCDF, ...] = ()
    atoms: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "singular", tuple(self.singular))
        object.__setattr__(self, "atoms", tuple(tuple(a) for a in self.atoms))

    def support(self) -> Interval:
        spans = [s.span() for s in self.singular]
        if self.density is not None:
            nonzero = np.flatnonzero(self.density.values)
            if len(nonzero):
                x = self.density.x
                lo = x[max(nonzero[0] - 1, 0)]
                hi = x[min(nonzero[-1] + 1, len(x) - 1)]
                spans.append((float(lo), float(hi)))
        if not spans:
            return 0.0, 0.0
        return min(a for a, _ in spans), max(b for _, b in spans)


def cantor_function(y: np.ndarray, depth: int) -> np.ndarray:
    """Cantor function on [0, 1] from `depth` ternary digits, within 2^-depth"""
    y = np.array(y, dtype=float)
    value = np.zeros_like(y)
    done = np.zeros(y.shape, dtype=bool)
    scale = 0.5
    for _ in range(depth):
        y = 3.0 * y
        digit = np.clip(np.floor(y), 0.0, 2.0)
        y = y - digit
        middle = (digit == 1.0) & ~done
        value = np.where(middle | ((digit == 2.0) & ~done), value + scale, value)
        done |= middle
        scale /= 2.0
    return np.where(done, value, value + 2.0 * scale * y)


def validate_measure(nu: RadonMeasureSpec) -> RadonMeasureSpec:
    if nu.atoms:
        raise MeasureValidationError(
            f"Measure has {len(nu.atoms)} atoms; only non-atomic measures are allowed"
        )
    return nu


def absolute_measure(nu: RadonMeasureSpec) -> RadonMeasureSpec:
    """|nu|, assuming the singular parts have disjoint supports"""
    validate_measure(nu)
    density = None
    if nu.density is not None:
        density = nu.density.with_values(np.abs(nu.density.values))
    return RadonMeasureSpec(density, tuple(s.absolute() for s in nu.singular))


def _density_cdf(f: ScalarField, x: np.ndarray) -> np.ndarray:
    """Exact CDF of the piecewise-linear density, zero outside its grid"""
    dx = f.grid.dx
    cells = dx * (f.values[:-1] + f.values[1:]) / 2.0
    nodes_cdf = np.concatenate(([0.0], np.cumsum(cells)))
    pos = np.clip((x - f.grid.left) / dx, 0.0, f.grid.n - 1)
    i = np.minimum(np.floor(pos).astype(int), f.grid.n - 2)
    theta = pos - i
    u0, u1 = f.values[i], f.values[i + 1]
    return nodes_cdf[i] + dx * (theta * u0 + theta * theta * (u1 - u0) / 2.0)


def measure_cdf(nu: RadonMeasureSpec, x: np.ndarray) -> np.ndarray:
    """G(x) = nu((-inf, x])"""
    validate_measure(nu)
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    if nu.density is not None:
        total = total + _density_cdf(nu.density, x)
    for part in nu.singular:
        total = total + part.cdf(x)
    return total


def measure_of_interval(nu: RadonMeasureSpec, a: float, b: float) -> float:
    if not a < b:
        raise DomainError(f"Need a < b (got {a}, {b})")
    g = measure_cdf(nu, np.array([a, b]))
    return float(g[1] - g[0])


def total_variation_of_interval(nu: RadonMeasureSpec, a: float, b: float) -> float:
    return measure_of_interval(absolute_measure(nu), a, b)


def total_variation(nu: RadonMeasureSpec) -> float:
    lo, hi = nu.support()
    if not hi > lo:
        return 0.0
    return total_variation_of_interval(nu, lo - 1.0, hi + 1.0)


def load_measure_spec(
    payload: Dict[str, Any],
    base_dir: Path = Path("."),
    density: Optional[ScalarField] = None,
) -> RadonMeasureSpec:
    """Measure from its JSON form; a prepared density overrides the payload's"""
    if not isinstance(payload, dict):
        raise MeasureValidationError("Measure spec must be a JSON object")
    source = payload.get("density")
    if density is None and isinstance(source, dict) and "csv" in source:
        density = read_field_csv(Path(base_dir) / source["csv"])
    singular = []
    for item in payload.get("singular", []):
        try:
            singular.append(
                SingularCDF(
                    kind=item["kind"],
                    depth=int(item.get("depth", 12)),
                    support=tuple(item.get("support", (0.0, 1.0))),
                    mass=float(item.get("mass", 1.0)),
                    sign=int(item.get("sign", 1)),
                    breakpoints=tuple(tuple(b) for b in item.get("breakpoints", ())),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MeasureValidationError(f"Bad singular part {item}: {e}")
    atoms = tuple(tuple(a) for a in payload.get("atoms", []))
    return validate_measure(RadonMeasureSpec(density, tuple(singular), atoms))


# ----------------------------
# Test functions
# ----------------------------


@dataclass(frozen=True)
class TestFunction:
    """Piecewise-linear test function through (knots, values), zero at both ends"""

    __test__ = False

    knots: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if len(knots) < 3 or knots.shape != values.shape:
            raise DomainError("Test function needs matching knots and values")
        if np.any(np.diff(knots) <= 0.0):
            raise DomainError("Test function knots must increase")
        if values[0] != 0.0 or values[-1] != 0.0:
            raise DomainError("Test function must vanish at its end knots")
        object.__setattr__(self, "knots", tuple(knots.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))

    @classmethod
    def hat(cls, a: float, b: float, height: float = 1.0) -> "TestFunction":
        return cls((a, (a + b) / 2.0, b), (0.0, height, 0.0))

    @property
    def constant(self) -> float:
        """(pi/2) * integral of |phi'|"""
        return math.pi / 2.0 * float(np.sum(np.abs(np.diff(self.values))))

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.knots, self.values, left=0.0, right=0.0)

    def on_grid(self, grid: Grid1D) -> ScalarField:
        if not grid.contains(self.knots[0], self.knots[-1]):
            raise DomainError("Test function support must lie inside the grid")
        return ScalarField(grid, self(grid.nodes))

    def integrate_field(self, u: ScalarField) -> float:
        return float(trapezoid(self(u.x) * u.values, u.x))

    def integrate_measure(self, nu: RadonMeasureSpec) -> float:
        """Integral of phi d(nu) = -integral of phi' G, G the CDF of nu"""
        total = 0.0
        for a, b, fa, fb in zip(
            self.knots[:-1], self.knots[1:], self.values[:-1], self.values[1:]
        ):
            x = np.linspace(a, b, _CDF_SAMPLES + 1)
            total -= (fb - fa) / (b - a) * float(trapezoid(measure_cdf(nu, x), x))
        return total


@dataclass(frozen=True)
class TestFunctionBattery:
    __test__ = False

    functions: Tuple[TestFunction, ...]

    @property
    def constants(self) -> List[float]:
        return [phi.constant for phi in self.functions]

    @property
    def max_constant(self) -> float:
        return max(self.constants)


def default_battery(support: Interval, levels: int = 3) -> TestFunctionBattery:
    """Hats of height 1 over dyadic pieces of the padded support, 2^levels - 1 total"""
    a, b = support
    if not b > a:
        raise DomainError(f"Empty support {support}")
    pad = (b - a) / 4.0
    lo, hi = a - pad, b + pad
    hats = []
    for level in range(levels):
        edges = np.linspace(lo, hi, 2**level + 1)
        hats.extend(
            TestFunction.hat(float(lo_), float(hi_))
            for lo_, hi_ in zip(edges[:-1], edges[1:])
        )
    return TestFunctionBattery(tuple(hats))


# ----------------------------
# Mollification
# ----------------------------


def _nodal_masses(nu: RadonMeasureSpec, grid: Grid1D, R: float) -> np.ndarray:
    """nu restricted to [-R, R], lumped onto dual cells of the grid"""
    half = grid.dx / 2.0
    lo = np.clip(grid.nodes - half, -R, R)
    hi = np.clip(grid.nodes + half, -R, R)
    return measure_cdf(nu, hi) - measure_cdf(nu, lo)


def mollifier_kernel(epsilon: float, dx: float) -> np.ndarray:
    """Discrete kernel of width epsilon summing to 1/dx"""
    k = int(math.ceil(epsilon / dx))
    weights = mollifier(np.arange(-k, k + 1) * dx / epsilon)
    return weights / (dx * np.sum(weights))


def mollify_pair(
    nu: RadonMeasureSpec,
    epsilon: float,
    cutoff_radius: float,
    grid: Optional[Grid1D] = None,
) -> Tuple[ScalarField, ScalarField]:
    """(u0, U0): mollified nu and the mollified |nu| that dominates it"""
    validate_measure(nu)
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive (got {epsilon})")
    if grid is None:
        grid = padded_grid((-cutoff_radius, cutoff_radius), epsilon / 8.0, widths=1.0)
    if epsilon < 2.0 * grid.dx:
        raise DomainError(f"epsilon={epsilon} must be at least twice dx={grid.dx}")
    reach = cutoff_radius + epsilon + grid.dx
    if not grid.contains(-reach, reach):
        raise DomainError("Mollified support must lie inside the grid")

    signed = _nodal_masses(nu, grid, cutoff_radius)
    absolute = _nodal_masses(absolute_measure(nu), grid, cutoff_radius)
    positive = (absolute + signed) / 2.0
    negative = (absolute - signed) / 2.0
    kernel = mollifier_kernel(epsilon, grid.dx)
    smooth_pos = np.convolve(positive, kernel, mode="same")
    smooth_neg = np.convolve(negative, kernel, mode="same")
    return (
        ScalarField(grid, smooth_pos - smooth_neg),
        ScalarField(grid, smooth_pos + smooth_neg),
    )


def mollify(
    nu: RadonMeasureSpec,
    epsilon: float,
    cutoff_radius: float,
    grid: Optional[Grid1D] = None,
) -> ScalarField:
    return mollify_pair(nu, epsilon, cutoff_radius, grid)[0]


def mollify_dominating(
    nu: RadonMeasureSpec,
    epsilon: float,
    cutoff_radius: float,
    grid: Optional[Grid1D] = None,
) -> ScalarField:
    return mollify_pair(nu, epsilon, cutoff_radius, grid)[1]


# ----------------------------
# Weak convergence
# ----------------------------


def weak_gaps(
    nu: RadonMeasureSpec,
    u: ScalarField,
    battery: TestFunctionBattery,
    exact: Optional[Sequence[float]] = None,
) -> List[float]:
    for phi in battery.functions:
        if not u.grid.contains(phi.knots[0], phi.knots[-1]):
            raise DomainError("Battery functions must lie inside the field's grid")
    if exact is None:
        exact = [phi.integrate_measure(nu) for phi in battery.functions]
    return [
        abs(phi.integrate_field(u) - value)
        for phi, value in zip(battery.functions, exact)
    ]


def weak_gap(
    nu: RadonMeasureSpec, u: ScalarField, battery: TestFunctionBattery
) -> float:
    return max(weak_gaps(nu, u, battery))


def mollification_allowance(
    nu: RadonMeasureSpec, battery: TestFunctionBattery, epsilon: float
) -> float:
    """epsilon * max Lip(phi) * |nu|(R), the kernel transport bound"""
    lipschitz = max(phi.lipschitz for phi in battery.functions)
    return epsilon * lipschitz * total_variation(nu)


def check_weak_gap(
    nu: RadonMeasureSpec,
    traj: Trajectory,
    battery: TestFunctionBattery,
    epsilon: float = 0.0,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """weak_gap(t) <= max C(phi) t + tol at every snapshot"""
    tol = trajectory_tolerance(traj, tol_scale=tol_scale)
    allowance = mollification_allowance(nu, battery, epsilon)
    exact = [phi.integrate_measure(nu) for phi in battery.functions]
    margin, witness = math.inf, (None, None)
    for t, u in zip(traj.times, traj.states):
        gaps = weak_gaps(nu, u, battery, exact)
        slack = min(c * t + allowance - g for c, g in zip(battery.constants, gaps))
        if slack < margin:
            margin, witness = slack, (None, float(t))
    return EstimateReport.from_margin(
        "weak-gap", margin, tol, witness, mollification_allowance=allowance
    )


# ----------------------------
# Flows from measures
# ----------------------------


@dataclass
class MeasureFlowResult:
    u: Trajectory
    U: Trajectory
    cauchy: EstimateReport
    epsilon: float
    flows: Dict[float, Tuple[Trajectory, Trajectory]] = field(
        default_factory=dict, repr=False
    )


def _flow_pair(
    nu: RadonMeasureSpec,
    epsilon: float,
    cutoff_radius: float,
    grid: Grid1D,
    t_end: float,
    opts: SolverOptions,
) -> Tuple[Trajectory, Trajectory]:
    u0, U0 = mollify_pair(nu, epsilon, cutoff_radius, grid)
    logger.info(f"Flowing mollified measure at epsilon={epsilon}")
    u = solve(u0, t_end, opts).with_meta(epsilon=epsilon)
    U = solve(U0, t_end, opts).with_meta(epsilon=epsilon)
    return u, U


def cauchy_report(
    flows: Sequence[Tuple[float, Trajectory]], compact: Interval, t_min: float
) -> EstimateReport:
    """Successive sup distances on `compact` must shrink by CAUCHY_RATIO"""
    distances = []
    for (e1, t1), (e2, t2) in zip(flows[:-1], flows[1:]):
        best = 0.0
        for t, a, b in zip(t1.times, t1.states, t2.states):
            if t < t_min or t <= 0.0:
                continue
            inside = (a.x >= compact[0]) & (a.x <= compact[1])
            best = max(best, float(np.max(np.abs(a.values - b.values)[inside])))
        distances.append(best)
    ratios = [
        d2 / d1 if d1 > 0.0 else 0.0 for d1, d2 in zip(distances[:-1], distances[1:])
    ]
    if not ratios:
        return EstimateReport.inconclusive(
            "cauchy", 0.0, "need at least three epsilons", distances=distances
        )
    margin = CAUCHY_RATIO - max(ratios)
    return EstimateReport.from_margin(
        "cauchy", margin, 0.0, (None, t_min), distances=distances, ratios=ratios
    )


def flow_from_measure(
    nu: RadonMeasureSpec,
    t_end: float,
    epsilons: Sequence[float],
    cutoff_radius: Optional[float] = None,
    dx: Optional[float] = None,
    dt_max: Optional[float] = None,
    snapshot_times: Sequence[float] = (),
    jobs: int = GCSF_JOBS,
) -> MeasureFlowResult:
    """u- and U-flows of mollifications of nu for each epsilon, finest returned"""
    validate_measure(nu)
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(e <= 0 for e in epsilons):
        raise DomainError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons[:-1], epsilons[1:])):
        raise DomainError("epsilons must be strictly decreasing")
    lo, hi = nu.support()
    if cutoff_radius is None:
        cutoff_radius = max(abs(lo), abs(hi), 1e-3)
    dx = epsilons[-1] / 4.0 if dx is None else dx
    grid = padded_grid((-cutoff_radius - epsilons[0], cutoff_radius + epsilons[0]), dx)
    opts = SolverOptions(
        dt_max=dt_max or dx,
        bc=BoundaryCondition(BC_ZERO),
        snapshot_times=tuple(snapshot_times),
    )
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        futures = [
            executor.submit(_flow_pair, nu, e, cutoff_radius, grid, t_end, opts)
            for e in epsilons
        ]
        pairs = [f.result() for f in futures]
    flows = dict(zip(epsilons, pairs))
    report = cauchy_report(
        [(e, pair[0]) for e, pair in zip(epsilons, pairs)],
        (-cutoff_radius, cutoff_radius),
        4.0 * epsilons[0] ** 2,
    )
    u, U = pairs[-1]
    return MeasureFlowResult(u, U, report, epsilons[-1], flows)


# ----------------------------
# Convergence and domination checks
# ----------------------------


def strong_convergence_check(
    traj: Trajectory,
    u0: ScalarField,
    region: Interval,
    p: float = 1.0,
    nu: Optional[RadonMeasureSpec] = None,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """||u(t) - u0||_Lp(region) shrinks to within tol as t -> 0"""
    a, b = region
    if nu is not None:
        for part in nu.singular:
            lo, hi = part.span()
            if a < hi and lo < b:
                raise DomainError(f"Region {region} meets singular support {(lo, hi)}")
    grid = traj.grid
    inside = grid.nodes[(grid.nodes > a) & (grid.nodes < b)]
    xs = np.concatenate(([a], inside, [b]))
    reference = sample_linear(u0, xs)
    gaps = []
    for t, s in zip(traj.times, traj.states):
        if t <= 0.0:
            continue
        diff = np.abs(sample_linear(s, xs) - reference) ** p
        gaps.append((float(t), float(trapezoid(diff, xs)) ** (1.0 / p)))
    if not gaps:
        return EstimateReport.inconclusive(
            "strong-convergence", 0.0, "no positive times"
        )
    tol = trajectory_tolerance(traj, tol_scale=tol_scale)
    values = [g for _, g in gaps]
    # Gaps may only grow with t, up to tol
    growth = min(
        (later - earlier for earlier, later in zip(values[:-1], values[1:])),
        default=math.inf,
    )
    return EstimateReport.from_margin(
        "strong-convergence",
        min(-values[0], growth),
        tol,
        (None, gaps[0][0]),
        gaps=gaps,
    )


def check_lp_growth(
    traj: Trajectory,
    p: float,
    rate: Optional[float] = None,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """||u(t)||_Lp <= ||u0||_Lp + C_{p,1} t with C_{p,1} = 2 pi p"""
    if p < 1:
        raise DomainError(f"p must be >= 1 (got {p})")
    rate = 2.0 * math.pi * p if rate is None else rate
    base = lp_norm(traj.states[0], p)
    tol = trajectory_tolerance(traj, tol_scale=tol_scale)
    slack = [base + rate * t - lp_norm(s, p) for t, s in zip(traj.times, traj.states)]
    k = int(np.argmin(slack))
    return EstimateReport.from_margin(
        "lp-growth", slack[k], tol, (None, float(traj.times[k])), p=p, rate=rate
    )


def check_dominating_growth(
    traj_U: Trajectory,
    nu: RadonMeasureSpec,
    interval: Interval,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """||U(t)||_L1(J) <= |nu|(J) + pi t"""
    mass = total_variation_of_interval(nu, *interval)
    tol = trajectory_tolerance(traj_U, tol_scale=tol_scale)
    slack = [
        mass + math.pi * t - l1_norm(s, interval)
        for t, s in zip(traj_U.times, traj_U.states)
    ]
    k = int(np.argmin(slack))
    return EstimateReport.from_margin(
        "dominating-growth", slack[k], tol, (None, float(traj_U.times[k])), mass=mass
    )


def check_dominated(
    traj_u: Trajectory, traj_U: Trajectory, tol_scale: float = GCSF_TOL_SCALE
) -> EstimateReport:
    """min over snapshots and nodes of U - |u|"""
    if traj_u.grid != traj_U.grid or not np.allclose(traj_u.times, traj_U.times):
        raise DomainError("Dominated check needs a shared grid and snapshot times")
    slack = traj_U.values() - np.abs(traj_u.values())
    k, i = np.unravel_index(int(np.argmin(slack)), slack.shape)
    tol = trajectory_tolerance(traj_U, tol_scale=tol_scale)
    return EstimateReport.from_margin(
        "dominated",
        float(slack[k, i]),
        tol,
        (float(traj_u.grid.nodes[i]), float(traj_u.times[k])),
    )


@dataclass(frozen=True)
class TraceEstimate:
    phi: TestFunction
    value: float
    drift: float
    error_bar: float


def initial_trace(
    traj: Trajectory, battery: TestFunctionBattery
) -> List[TraceEstimate]:
    """Extrapolate integral phi u(t) to t = 0 for each battery function"""
    rows = [(float(t), s) for t, s in zip(traj.times, traj.states) if t > 0.0]
    if not rows:
        raise DomainError("Initial trace needs positive snapshot times")
    times = np.array([t for t, _ in rows])
    t_min = float(times[0])
    estimates = []
    for phi in battery.functions:
        values = np.array([phi.integrate_field(s) for _, s in rows])
        bar = phi.constant * t_min
        if len(rows) > 1:
            drift, intercept = np.polyfit(times, values, 1)
        else:
            drift, intercept = 0.0, values[0]
        value = float(np.clip(intercept, values[0] - bar, values[0] + bar))
        estimates.append(TraceEstimate(phi, value, float(drift), bar))
    return estimates


def check_initial_trace(
    nu: RadonMeasureSpec,
    traj: Trajectory,
    battery: TestFunctionBattery,
    epsilon: float = 0.0,
    tol_scale: float = GCSF_TOL_SCALE,
) -> EstimateReport:
    """|L phi - integral phi d(nu)| <= C(phi) t_min + tol for each phi"""
    tol = trajectory_tolerance(traj, tol_scale=tol_scale)
    allowance = mollification_allowance(nu, battery, epsilon)
    reports = []
    for k, est in enumerate(initial_trace(traj, battery)):
        exact = est.phi.integrate_measure(nu)
        reports.append(
            EstimateReport.from_margin(
                f"trace-{k}",
                est.error_bar + allowance - abs(est.value - exact),
                tol,
                value=est.value,
                exact=exact,
            )
        )
    return combine_reports("initial-trace", reports)
