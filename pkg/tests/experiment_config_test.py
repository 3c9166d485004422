import json
import math

import numpy as np
import pytest

from app import experiment_config
from app.experiment_config import (
    build_bc,
    build_curve,
    build_field,
    build_grid,
    build_snapshots,
    build_solver_options,
    builtin_names,
    load_config,
    parse_config,
    resolve_profile,
)
from app.experiment_constants import BUILTIN_EXPERIMENTS
from app.gcsf_ops import BC_DIRICHLET_ORACLE, BC_ZERO
from app.lab_errors import ConfigValidationError, DomainError

_GRID = {"left": -1.0, "right": 1.0, "n": 21}


def test_builtin_profiles():
    x = np.array([-1.0, 0.0, 0.5])
    for spec, expected in [
        ({"profile": "zero"}, [0.0, 0.0, 0.0]),
        ({"profile": "constant", "value": 2.0}, [2.0, 2.0, 2.0]),
        ({"profile": "parabola"}, [0.0, 1.0, 0.75]),
        ({"profile": "hat", "half_width": 0.5}, [0.0, 1.0, 0.0]),
        ({"profile": "linear", "slope": 2.0, "support": [0.0, 1.0]}, [0.0, 0.0, 1.0]),
        ({"profile": "sine", "wavenumber": 1.0}, [0.0, 0.0, 1.0]),
    ]:
        assert np.allclose(resolve_profile(spec)(x), expected)
    spike = resolve_profile({"profile": "spike", "n": 4.0, "mass": 0.5})
    assert spike(np.array([0.0]))[0] > 0.0


def test_unknown_profiles():
    for spec in [{}, {"profile": "nope"}, {"profile": "hat", "radius": 1.0}]:
        with pytest.raises(ConfigValidationError):
            resolve_profile(spec)


def test_profiles_module(monkeypatch):
    monkeypatch.setattr(
        experiment_config, "GCSF_PROFILES_MODULE_NAME", "tests.profiles_example"
    )
    fn = resolve_profile({"profile": "two_hats", "separation": 1.0})
    assert np.allclose(fn(np.array([-0.5, 0.0, 0.5])), [1.0, 0.0, 1.0])
    field = build_field({"profile": "gaussian", "grid": _GRID})
    assert field.values[10] == pytest.approx(1.0)


def test_build_grid():
    assert build_grid(_GRID).n == 21
    assert build_grid({"left": 0.0, "right": 1.0, "dx": 0.1}).n == 11
    for spec in [
        None,
        {"left": 0.0, "right": 1.0},
        {"left": 1.0, "right": 0.0, "n": 11},
        {"left": 0.0, "right": 1.0, "n": 2},
        {"left": True, "right": 1.0, "n": 11},
    ]:
        with pytest.raises(ConfigValidationError):
            build_grid(spec)


def test_build_field_from_csv(tmp_path):
    with pytest.raises(ConfigValidationError):
        build_field({"csv": "missing.csv"}, tmp_path)
    with pytest.raises(ConfigValidationError):
        build_field({"profile": "hat"})


def test_build_snapshots():
    for spec, expected in [
        (None, ()),
        ({"count": 4}, (0.25, 0.5, 0.75, 1.0)),
        ([0.1, 0.5], (0.1, 0.5)),
    ]:
        assert build_snapshots(spec, 1.0) == pytest.approx(expected)
    for spec in [{"count": 0}, [1.5], "often"]:
        with pytest.raises(ConfigValidationError):
            build_snapshots(spec, 1.0)


def test_build_solver_options():
    bc = build_bc(None)
    assert bc.kind == BC_ZERO
    for spec, expected in [
        (None, 0.1),
        ({"dt_max": 0.05}, 0.05),
        ({"dt_factor": 2.0}, 0.02),
    ]:
        opts = build_solver_options(spec, bc, (), 0.1)
        assert opts.dt_max == pytest.approx(expected)
    assert build_solver_options({"theta": 0.5}, bc, (0.5,), 0.1).theta == 0.5
    for spec in [{"theta": 0.2}, {"dt_max": "small"}]:
        with pytest.raises(ConfigValidationError):
            build_solver_options(spec, bc, (), 0.1)


def test_build_bc():
    assert build_bc({"kind": BC_DIRICHLET_ORACLE}).oracle is not None
    for spec in [{"kind": "neumann"}, {"kind": BC_DIRICHLET_ORACLE, "oracle": "x"}]:
        with pytest.raises(ConfigValidationError):
            build_bc(spec)


def test_build_curve():
    line = build_curve({"source": "line", "y": 0.5, "m": 11})
    assert len(line) == 11
    assert np.allclose(line.y, 0.5)
    circle = build_curve({"source": "circle", "r0": 2.0, "m": 64})
    assert circle.closed
    assert circle.length() == pytest.approx(4.0 * math.pi, rel=1e-2)
    for spec in [{"source": "spiral"}, {"source": "oval", "s": 1.0}, {}]:
        with pytest.raises(ConfigValidationError):
            build_curve(spec)


def test_parse_config_errors():
    for payload in [
        [],
        {"kind": "nope"},
        {"kind": "solve"},
        {"kind": "lp", "initial": {"profile": "hat", "grid": _GRID}, "t": 0.1},
        {"kind": "solve", "t_end": -1.0},
        {"kind": "solve", "t_end": 1.0, "snapshots": [2.0]},
        {"kind": "solve", "t_end": 1.0, "bc": {"kind": "periodic"}},
        {
            "kind": "measure-flow",
            "measures": [],
            "epsilons": [0.05, 0.1],
            "t_end": 0.1,
        },
    ]:
        with pytest.raises(ConfigValidationError):
            parse_config(payload, "bad")
    with pytest.raises(DomainError):
        parse_config(
            {
                "kind": "measure-flow",
                "measures": [{"atoms": [[0.0, 1.0]]}],
                "epsilons": [0.1],
                "t_end": 0.1,
            },
            "atoms",
        )


def test_parse_config():
    config = parse_config(
        {"kind": "solve", "name": "tiny", "t_end": 0.5, "checks": ["a"], "seed": 3},
        "fallback",
    )
    assert config.name == "tiny"
    assert config.kind == "solve"
    assert config.checks == ["a"]
    assert config.seed == 3
    assert "kind" not in config.params


def test_load_every_builtin():
    assert builtin_names() == list(BUILTIN_EXPERIMENTS)
    for name in builtin_names():
        config = load_config(name)
        assert config.name == name


def test_load_config_from_path(tmp_path):
    path = tmp_path / "custom.json"
    path.write_text(json.dumps({"kind": "validate-exact", "suites": ["circle"]}))
    config = load_config(str(path))
    assert config.name == "custom"
    assert config.base_dir == tmp_path
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    for ref in [str(broken), "no-such-experiment"]:
        with pytest.raises(ConfigValidationError):
            load_config(ref)
