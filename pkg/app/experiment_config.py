import json
import logging
import math
from dataclasses import dataclass, field
from importlib import import_module
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.artifact_ops import read_field_csv, read_polyline_csv
from app.core_types import Grid1D, Polyline, ScalarField
from app.csf_ops import CurveFlowOptions, graph_polyline
from app.env import GCSF_PROFILES_MODULE_NAME, GCSF_SEED
from app.estimate_ops import unit_spike
from app.exact_solutions import angenent_oval, grim_reaper, shrinking_circle
from app.experiment_constants import BUILTIN_EXPERIMENTS, CONFIGS_DIR, EXPERIMENT_KINDS
from app.gcsf_ops import BC_DIRICHLET_ORACLE, BC_KINDS, BoundaryCondition, SolverOptions
from app.lab_errors import ConfigValidationError, DomainError
from app.measure_ops import (
    RadonMeasureSpec,
    TestFunctionBattery,
    default_battery,
    load_measure_spec,
)

logger = logging.getLogger(__name__)

Profile = Callable[[np.ndarray], np.ndarray]

# Keys each kind needs before anything is built
REQUIRED_KEYS: Dict[str, Tuple[str, ...]] = {
    "solve": ("t_end",),
    "local-gcsf": ("initial", "t_end"),
    "harnack": ("initials", "t_end"),
    "delayed": ("checks",),
    "lp": ("initial", "t", "p"),
    "sharpness": ("n_values",),
    "separation": (),
    "measure-flow": ("measures", "epsilons", "t_end"),
    "intersections": ("pairs", "t_end"),
    "validate-exact": ("suites",),
}

# ----------------------------
# Initial data profiles
# ----------------------------


def _zero() -> Profile:
    return lambda x: np.zeros_like(np.asarray(x, dtype=float))


def _constant(value: float = 1.0) -> Profile:
    return lambda x: np.full_like(np.asarray(x, dtype=float), value)


def _parabola(amplitude: float = 1.0, half_width: float = 1.0) -> Profile:
    return lambda x: amplitude * np.clip(1.0 - (x / half_width) ** 2, 0.0, None)


def _hat(height: float = 1.0, half_width: float = 1.0, center: float = 0.0) -> Profile:
    return lambda x: height * np.clip(1.0 - np.abs(x - center) / half_width, 0.0, None)


def _spike(n: float = 4.0, mass: float = 1.0) -> Profile:
    shape = unit_spike(n)
    return lambda x: mass * shape(x)


def _bump(mass: float = 1.0, width: float = 1.0, center: float = 0.0) -> Profile:
    shape = unit_spike(1.0 / width)
    return lambda x: mass * shape(np.asarray(x) - center)


def _sine(amplitude: float = 1.0, wavenumber: float = 1.0, phase: float = 0.0):
    return lambda x: amplitude * np.sin(math.pi * wavenumber * x + phase)


def _linear(
    slope: float = 1.0, offset: float = 0.0, support: Optional[Sequence[float]] = None
) -> Profile:
    def fn(x: np.ndarray) -> np.ndarray:
        y = slope * np.asarray(x, dtype=float) + offset
        if support is None:
            return y
        return np.where((x >= support[0]) & (x <= support[1]), y, 0.0)

    return fn


def _grim_reaper(t: float = 0.0, L: float = 0.0) -> Profile:
    return lambda x: grim_reaper(x, t, L)


PROFILES: Dict[str, Callable[..., Profile]] = {
    "zero": _zero,
    "constant": _constant,
    "parabola": _parabola,
    "hat": _hat,
    "spike": _spike,
    "bump": _bump,
    "sine": _sine,
    "linear": _linear,
    "grim-reaper": _grim_reaper,
}

# Keys of a field spec that are not profile parameters
_FIELD_KEYS = ("grid", "profile", "label", "a_bar")


def resolve_profile(spec: Dict[str, Any]) -> Profile:
    """Profile function from {"profile": name, **params}

    Names not built in are looked up in the GCSF_PROFILES_MODULE_NAME module."""
    name = spec.get("profile")
    if not isinstance(name, str):
        raise ConfigValidationError(f"Missing profile name in {spec}")
    params = {k: v for k, v in spec.items() if k not in _FIELD_KEYS}
    factory = PROFILES.get(name)
    if factory is None and GCSF_PROFILES_MODULE_NAME is not None:
        factory = getattr(import_module(GCSF_PROFILES_MODULE_NAME), name, None)
    if factory is None:
        raise ConfigValidationError(f"Unknown profile: {name}")
    try:
        return factory(**params)
    except TypeError as e:
        raise ConfigValidationError(f"Bad parameters for profile {name}: {e}")


# ----------------------------
# Builders
# ----------------------------


def _number(spec: Dict[str, Any], key: str, default: Any = None) -> float:
    value = spec.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"{key} must be a number (got {value!r})")
    return float(value)


def build_grid(spec: Dict[str, Any]) -> Grid1D:
    if not isinstance(spec, dict):
        raise ConfigValidationError(f"Grid spec must be an object (got {spec!r})")
    left, right = _number(spec, "left"), _number(spec, "right")
    try:
        if "n" in spec:
            return Grid1D(left, right, int(spec["n"]))
        return Grid1D.with_spacing(left, right, _number(spec, "dx"))
    except DomainError as e:
        raise ConfigValidationError(f"Bad grid {spec}: {e}")


def build_field(spec: Dict[str, Any], base_dir: Path = Path(".")) -> ScalarField:
    if not isinstance(spec, dict):
        raise ConfigValidationError(f"Field spec must be an object (got {spec!r})")
    if "csv" in spec:
        try:
            return read_field_csv(Path(base_dir) / spec["csv"])
        except (OSError, DomainError) as e:
            raise ConfigValidationError(f"Cannot read field {spec['csv']}: {e}")
    grid = build_grid(spec.get("grid"))
    try:
        return ScalarField.from_function(grid, resolve_profile(spec))
    except DomainError as e:
        raise ConfigValidationError(f"Bad field {spec}: {e}")


def build_measure(spec: Dict[str, Any], base_dir: Path = Path(".")) -> RadonMeasureSpec:
    if not isinstance(spec, dict):
        raise ConfigValidationError(f"Measure spec must be an object (got {spec!r})")
    density = spec.get("density")
    field_ = None
    if isinstance(density, dict) and "profile" in density:
        field_ = build_field(density, base_dir)
    return load_measure_spec(spec, base_dir, field_)


def build_battery(
    spec: Optional[Dict[str, Any]], nu: RadonMeasureSpec
) -> TestFunctionBattery:
    spec = spec or {}
    support = spec.get("support")
    if support is None:
        lo, hi = nu.support()
        support = (lo, hi) if hi > lo else (-1.0, 1.0)
    return default_battery(tuple(support), int(spec.get("levels", 3)))


def build_bc(spec: Optional[Dict[str, Any]]) -> BoundaryCondition:
    spec = spec or {}
    kind = spec.get("kind", "zero")
    if kind not in BC_KINDS:
        raise ConfigValidationError(f"Unknown boundary condition: {kind}")
    oracle = None
    if kind == BC_DIRICHLET_ORACLE:
        oracle_profile = spec.get("oracle", "grim-reaper")
        if oracle_profile != "grim-reaper":
            raise ConfigValidationError(f"Unknown oracle: {oracle_profile}")
        oracle = grim_reaper
    return BoundaryCondition(kind, oracle)


def build_snapshots(spec: Any, t_end: float) -> Tuple[float, ...]:
    """Explicit list of times, or {"count": N} for N equally spaced times"""
    if spec is None:
        return ()
    if isinstance(spec, dict):
        count = int(spec.get("count", 10))
        if count < 1:
            raise ConfigValidationError(f"Snapshot count must be >= 1 ({count})")
        return tuple(float(t) for t in np.linspace(0.0, t_end, count + 1)[1:])
    if not isinstance(spec, list):
        raise ConfigValidationError(f"Bad snapshot spec {spec!r}")
    times = tuple(float(t) for t in spec)
    if any(t < 0.0 or t > t_end for t in times):
        raise ConfigValidationError(f"Snapshot times must lie in [0, {t_end}]")
    return times


def build_solver_options(
    spec: Optional[Dict[str, Any]],
    bc: BoundaryCondition,
    snapshot_times: Sequence[float],
    dx: float,
) -> SolverOptions:
    """dt_max is absolute, or dt_factor * dx^2 when given"""
    spec = spec or {}
    if "dt_factor" in spec:
        dt_max = _number(spec, "dt_factor") * dx * dx
    else:
        dt_max = _number(spec, "dt_max", dx)
    kwargs = {
        k: spec[k] for k in ("theta", "ramp_steps", "monotone") if k in spec
    }
    try:
        return SolverOptions(
            dt_max=dt_max, bc=bc, snapshot_times=tuple(snapshot_times), **kwargs
        )
    except DomainError as e:
        raise ConfigValidationError(f"Bad solver options {spec}: {e}")


def build_curve_options(spec: Optional[Dict[str, Any]]) -> CurveFlowOptions:
    spec = dict(spec or {})
    spec.pop("h", None)
    try:
        return CurveFlowOptions(**spec)
    except TypeError as e:
        raise ConfigValidationError(f"Bad curve options {spec}: {e}")


def build_curve(spec: Dict[str, Any], base_dir: Path = Path(".")) -> Polyline:
    """Polyline from {"source": graph | line | circle | oval | csv, ...}"""
    try:
        return _build_curve(spec, base_dir)
    except (DomainError, OSError, KeyError) as e:
        raise ConfigValidationError(f"Bad curve {spec}: {e}")


def _build_curve(spec: Dict[str, Any], base_dir: Path) -> Polyline:
    source = spec.get("source")
    m = int(spec.get("m", 256))
    if source == "graph":
        a, b = spec.get("interval", (-1.0, 1.0))
        x = np.linspace(a, b, m)
        profile_spec = {
            k: v for k, v in spec.items() if k not in ("source", "interval", "m")
        }
        return graph_polyline(x, resolve_profile(profile_spec)(x))
    if source == "line":
        a, b = spec.get("interval", (-1.0, 1.0))
        x = np.linspace(a, b, m)
        return graph_polyline(x, np.full(m, _number(spec, "y", 0.0)))
    if source == "circle":
        center = tuple(spec.get("center", (0.0, 0.0)))
        return shrinking_circle(center, _number(spec, "r0", 1.0), 0.0, m)
    if source == "oval":
        return angenent_oval(
            _number(spec, "s"), m, _number(spec, "vertical_shift", 0.0)
        )
    if source == "csv":
        return read_polyline_csv(
            Path(base_dir) / spec["path"], closed=bool(spec.get("closed", False))
        )
    raise ConfigValidationError(f"Unknown curve source: {source}")


# ----------------------------
# Configs
# ----------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def seed(self) -> int:
        return int(self.params.get("seed", GCSF_SEED))

    @property
    def checks(self) -> List[str]:
        return list(self.params.get("checks", []))


def builtin_names() -> List[str]:
    return list(BUILTIN_EXPERIMENTS)


def _resolve_path(ref: str) -> Path:
    path = Path(ref)
    if path.is_file():
        return path
    builtin = CONFIGS_DIR / f"{ref}.json"
    if builtin.is_file():
        return builtin
    raise ConfigValidationError(f"No config file or built-in experiment named {ref}")


def parse_config(
    payload: Any, name: str, base_dir: Path = Path(".")
) -> ExperimentConfig:
    if not isinstance(payload, dict):
        raise ConfigValidationError("Config must be a JSON object")
    kind = payload.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigValidationError(
            f"Unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}"
        )
    params = {k: v for k, v in payload.items() if k not in ("kind", "name")}
    config = ExperimentConfig(payload.get("name", name), kind, params, base_dir)
    validate_config(config)
    return config


def load_config(ref: str) -> ExperimentConfig:
    path = _resolve_path(ref)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigValidationError(f"{path} is not valid JSON: {e}")
    logger.debug(f"Loaded config {path}")
    return parse_config(payload, path.stem, path.parent)


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """Checks required keys and builds every data spec once"""
    params = config.params
    missing = [k for k in REQUIRED_KEYS[config.kind] if k not in params]
    if missing:
        raise ConfigValidationError(
            f"{config.kind} config {config.name} is missing {', '.join(missing)}"
        )
    for key in ("t_end", "t", "p"):
        if key in params and _number(params, key) <= 0.0:
            raise ConfigValidationError(f"{key} must be positive")
    if "initial" in params:
        build_field(params["initial"], config.base_dir)
    for spec in params.get("initials", []):
        build_field(spec, config.base_dir)
    for spec in params.get("measures", []):
        build_measure(spec, config.base_dir)
    for pair in params.get("pairs", []):
        for spec in pair.get("curves", []):
            build_curve(spec, config.base_dir)
    if "bc" in params:
        build_bc(params["bc"])
    if "epsilons" in params:
        epsilons = [float(e) for e in params["epsilons"]]
        if any(b >= a for a, b in zip(epsilons[:-1], epsilons[1:])):
            raise ConfigValidationError("epsilons must be strictly decreasing")
    if "t_end" in params:
        build_snapshots(params.get("snapshots"), _number(params, "t_end"))
    return config
