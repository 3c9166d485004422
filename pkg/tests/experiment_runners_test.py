import logging
import math

import pytest

from app.experiment_config import parse_config
from app.experiment_constants import EXPERIMENT_KINDS
from app.experiment_runners import RUNNERS, run_experiment
from app.lab_errors import ConfigValidationError


def _hat(height, n=81):
    return {
        "profile": "hat",
        "height": height,
        "grid": {"left": -2.0, "right": 2.0, "n": n},
    }


def _run(payload, tmp_path):
    config = parse_config(payload, "test", tmp_path)
    return run_experiment(config, tmp_path / "out", logger=logging.getLogger("test"))


def test_every_kind_has_a_runner():
    assert set(RUNNERS) == set(EXPERIMENT_KINDS)


def test_solve_with_comparison(tmp_path):
    outcome = _run(
        {
            "kind": "solve",
            "initial": _hat(0.5),
            "compare_with": _hat(1.0),
            "t_end": 0.1,
            "snapshots": {"count": 2},
            "solver": {"dt_max": 0.01},
        },
        tmp_path,
    )
    assert outcome.passed
    assert [r.name for r in outcome.reports] == ["max-principle", "comparison"]
    assert outcome.trends["pde_residual"] is not None
    assert (tmp_path / "out" / "reports.json").is_file()
    assert outcome.to_dict()["passed"] is True


def test_oracle_convergence(tmp_path):
    outcome = _run(
        {
            "kind": "solve",
            "oracle": "grim-reaper",
            "n_values": [101, 201],
            "t_end": 0.1,
            "solver": {"dt_factor": 1.0},
            "min_order": 1.5,
            "max_error": 1e-2,
        },
        tmp_path,
    )
    assert outcome.passed, outcome.to_dict()
    assert (tmp_path / "out" / "convergence.csv").is_file()


def test_truncation_level(tmp_path):
    outcome = _run(
        {
            "kind": "lp",
            "initial": {
                "profile": "hat",
                "grid": {"left": -4.0, "right": 4.0, "n": 801},
            },
            "t": 0.25,
            "p": 2.0,
            "expected_k": 0.5,
        },
        tmp_path,
    )
    assert outcome.passed
    assert outcome.trends["k"] == pytest.approx(0.5)


def test_exact_suites(tmp_path):
    outcome = _run(
        {"kind": "validate-exact", "suites": ["grim-reaper", "oval-grim-reaper"]},
        tmp_path,
    )
    assert outcome.passed, outcome.to_dict()
    failing = _run(
        {"kind": "validate-exact", "suites": {"grim-reaper": {"tol": -1.0}}},
        tmp_path,
    )
    assert not failing.passed


def _grim_reaper_pair(**overrides):
    spec = {
        "interval": [-0.9, 0.9],
        "n": 181,
        "times": [0.0, 0.1, 0.2, 0.3],
        "rate_range": [1.75 * math.pi, 1.85 * math.pi],
    }
    spec.update(overrides)
    return {"kind": "separation", "grim_reaper_pair": spec}


def test_grim_reaper_pair_is_flowed(tmp_path):
    outcome = _run(_grim_reaper_pair(), tmp_path)
    assert outcome.passed, outcome.to_dict()
    (report,) = outcome.reports
    assert report.details["exact_rate"] == pytest.approx(1.8 * math.pi, rel=1e-3)
    assert outcome.trends["grim_reaper_pair_rate"] == pytest.approx(
        1.8 * math.pi, rel=1e-2
    )
    assert all(0.0 < e < 5e-2 for e in report.details["flow_errors"])
    # The flowed width-1.8 pair cannot separate at the full-width rate
    full_width = _grim_reaper_pair(
        rate_range=[1.9 * math.pi, 2.0 * math.pi], relative_slack=0.0
    )
    assert not _run(full_width, tmp_path).passed


_SINE_CURVE = {"source": "graph", "profile": "sine", "interval": [-1.5, 1.5], "m": 61}
_AXIS_CURVE = {"source": "line", "y": 0.0, "interval": [-2.0, 2.0], "m": 41}


def test_intersections(tmp_path):
    outcome = _run(
        {
            "kind": "intersections",
            "t_end": 0.2,
            "snapshots": {"count": 5},
            "pairs": [
                {
                    "label": "sine-axis",
                    "curves": [_SINE_CURVE, _AXIS_CURVE],
                    "expected_initial": 3,
                },
                {
                    "label": "oval-in-circle",
                    "mode": "avoidance",
                    "curves": [
                        {"source": "oval", "s": -0.6, "m": 64},
                        {"source": "circle", "r0": 3.0, "m": 128},
                    ],
                },
            ],
        },
        tmp_path,
    )
    assert outcome.passed, outcome.to_dict()
    names = [r.name for r in outcome.reports]
    assert names == ["sine-axis/intersection-monotone", "oval-in-circle/avoidance"]
    counts = outcome.reports[0].details["counts"]
    assert len(counts) == 6
    assert counts[0] == 3
    assert (tmp_path / "out" / "sine-axis.csv").is_file()
    assert (tmp_path / "out" / "oval-in-circle.csv").is_file()

    wrong = {"expected_initial": 1, "curves": [_SINE_CURVE, _AXIS_CURVE]}
    payload = {"kind": "intersections", "t_end": 0.1, "pairs": [wrong]}
    assert not _run(payload, tmp_path).passed


def test_bad_runner_configs(tmp_path):
    for payload in [
        {"kind": "validate-exact", "suites": ["sphere"]},
        {"kind": "local-gcsf", "initial": _hat(1.0), "t_end": 0.1, "checks": ["x"]},
        {"kind": "delayed", "checks": []},
        {"kind": "solve", "t_end": 0.1},
        {"kind": "solve", "t_end": 0.1, "oracle": "circle"},
    ]:
        with pytest.raises(ConfigValidationError):
            _run(payload, tmp_path)
