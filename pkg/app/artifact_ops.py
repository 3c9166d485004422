import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from app.core_types import (
    EstimateReport,
    Grid1D,
    Polyline,
    ScalarField,
    Trajectory,
    _jsonable,
)
from app.lab_errors import DomainError

PathLike = Union[str, Path]


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


# ----------------------------
# Fields and polylines
# ----------------------------


def write_field_csv(path: PathLike, f: ScalarField) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["x", "u"])
        for x, u in zip(f.x, f.values):
            writer.writerow([_fmt(x), _fmt(u)])
    return path


def read_field_csv(path: PathLike) -> ScalarField:
    rows = _read_rows(path, ["x", "u"])
    x, u = rows[:, 0], rows[:, 1]
    grid = Grid1D(float(x[0]), float(x[-1]), len(x))
    if not np.allclose(grid.nodes, x, rtol=0.0, atol=1e-9 * (x[-1] - x[0])):
        raise DomainError(f"{path} does not sample a uniform grid")
    return ScalarField(grid, u)


def write_polyline_csv(path: PathLike, p: Polyline) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["x", "y"])
        for x, y in p.vertices:
            writer.writerow([_fmt(x), _fmt(y)])
    return path


def read_polyline_csv(path: PathLike, closed: bool = False) -> Polyline:
    return Polyline(_read_rows(path, ["x", "y"]), closed=closed)


def _read_rows(path: PathLike, header: List[str]) -> np.ndarray:
    with Path(path).open(newline="") as fp:
        reader = csv.reader(fp)
        first = next(reader, None)
        if first != header:
            raise DomainError(f"{path}: expected header {header}, got {first}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise DomainError(f"{path} has no data rows")
    return np.array(rows, dtype=float)


# ----------------------------
# Trajectories, reports and tables
# ----------------------------


def write_trajectory(
    directory: PathLike, traj: Trajectory, stem: str = "snapshot"
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, state in enumerate(traj.states):
        name = f"{stem}_{k:04d}.csv"
        if isinstance(state, ScalarField):
            write_field_csv(directory / name, state)
        else:
            write_polyline_csv(directory / name, state)
        files.append(name)
    index = {
        "times": [float(t) for t in traj.times],
        "files": files,
        "closed": None if traj.is_field else bool(traj.states[0].closed),
        "meta": _jsonable(traj.meta),
    }
    index_path = directory / f"{stem}_index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index_path


def read_trajectory(index_path: PathLike) -> Trajectory:
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    closed = index.get("closed")
    states = [
        (
            read_field_csv(index_path.parent / name)
            if closed is None
            else read_polyline_csv(index_path.parent / name, closed=closed)
        )
        for name in index["files"]
    ]
    return Trajectory(index["times"], tuple(states), index.get("meta", {}))


def write_reports_json(path: PathLike, reports: Iterable[EstimateReport]) -> Path:
    path = Path(path)
    payload = [r.to_dict() for r in reports]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_table_csv(
    path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(list(columns))
        for row in rows:
            writer.writerow(
                [
                    _fmt(v) if isinstance(v, (float, np.floating)) else v
                    for v in row
                ]
            )
    return path
