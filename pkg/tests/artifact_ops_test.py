import json

import numpy as np
import pytest

from app.artifact_ops import (
    read_field_csv,
    read_polyline_csv,
    read_trajectory,
    write_field_csv,
    write_json,
    write_reports_json,
    write_table_csv,
    write_trajectory,
)
from app.core_types import EstimateReport, Grid1D, Polyline, ScalarField, Trajectory
from app.lab_errors import DomainError


def test_field_csv_keeps_full_precision(tmp_path):
    f = ScalarField.from_function(Grid1D(-1.0, 1.0, 7), lambda x: np.exp(x) / 3.0)
    restored = read_field_csv(write_field_csv(tmp_path / "u.csv", f))
    assert restored.grid == f.grid
    assert np.array_equal(restored.values, f.values)


def test_read_field_csv_errors(tmp_path):
    for name, text in [
        ("header.csv", "x,y\n0,0\n1,1\n2,2\n"),
        ("empty.csv", "x,u\n"),
        ("uneven.csv", "x,u\n0,0\n0.3,0\n1,0\n"),
    ]:
        (tmp_path / name).write_text(text)
        with pytest.raises(DomainError):
            read_field_csv(tmp_path / name)


def test_trajectory_files(tmp_path):
    grid = Grid1D(0.0, 1.0, 5)
    states = tuple(ScalarField(grid, np.full(5, t)) for t in (0.0, 0.5))
    traj = Trajectory([0.0, 0.5], states, {"steps": np.int64(4), "dt": 0.125})
    index_path = write_trajectory(tmp_path / "run", traj)
    index = json.loads(index_path.read_text())
    assert index["files"] == ["snapshot_0000.csv", "snapshot_0001.csv"]
    assert index["closed"] is None
    assert index["meta"] == {"steps": 4, "dt": 0.125}
    restored = read_trajectory(index_path)
    assert np.array_equal(restored.values(), traj.values())


def test_curve_trajectory_files(tmp_path):
    square = Polyline([(0, 0), (1, 0), (1, 1), (0, 1)], closed=True)
    traj = Trajectory([0.0], (square,))
    restored = read_trajectory(write_trajectory(tmp_path, traj, "curve"))
    assert restored.states[0].closed
    assert np.array_equal(restored.states[0].vertices, square.vertices)
    path = tmp_path / "curve_0000.csv"
    assert not read_polyline_csv(path).closed


def test_reports_and_tables(tmp_path):
    reports = [
        EstimateReport.from_margin("ok", 0.5, 0.0),
        EstimateReport.inconclusive("short", 0.0, "one snapshot"),
    ]
    payload = json.loads(write_reports_json(tmp_path / "r.json", reports).read_text())
    assert [r["status"] for r in payload] == ["pass", "inconclusive"]
    assert payload[1]["margin"] is None

    table = write_table_csv(tmp_path / "t.csv", ("n", "err"), [(1, 0.1), (2, "")])
    assert table.read_text() == "n,err\n1,0.10000000000000001\n2,\n"

    out = write_json(tmp_path / "s.json", {"values": np.array([1.0, 2.0])})
    assert json.loads(out.read_text()) == {"values": [1.0, 2.0]}
