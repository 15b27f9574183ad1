"""Plain-text serialization: measure and plan CSVs, trajectory folders,
control-field CSVs and JSON reports."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable

import numpy as np

from .control import ControlField
from .dynamics import Trajectory
from .measures import BoxDomain, DiscreteMeasure
from .transport import TransportPlan

__all__ = [
    "read_measure",
    "read_trajectory_index",
    "to_jsonable",
    "write_control_field",
    "write_json",
    "write_measure",
    "write_plan",
    "write_rows",
    "write_trajectory",
]

_HEADER = re.compile(r"#\s*dim=(\d+)\s+n=(\d+)(?:\s+t=(\S+))?")


def write_measure(path, mu: DiscreteMeasure, t: float | None = None) -> Path:
    """One atom per row, preceded by ``# dim=<d> n=<N>`` (and ``t=`` if given)."""
    path = Path(path)
    header = f"dim={mu.dim} n={mu.n}" + ("" if t is None else f" t={t!r}")
    np.savetxt(path, mu.points, delimiter=",", header=header, fmt="%.17g")
    return path


def read_measure(path) -> tuple[DiscreteMeasure, float | None]:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    m = _HEADER.fullmatch(first)
    if not m:
        raise ValueError(f"{path}: missing '# dim=<d> n=<N>' header")
    dim, n = int(m.group(1)), int(m.group(2))
    pts = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if pts.shape != (n, dim):
        raise ValueError(f"{path}: header says ({n}, {dim}), found {pts.shape}")
    return DiscreteMeasure(pts), (float(m.group(3)) if m.group(3) else None)


def write_plan(path, plan: TransportPlan) -> Path:
    path = Path(path)
    costs = plan.pair_costs()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "sigma_i", "cost"])
        for i, (j, c) in enumerate(zip(plan.matching, costs)):
            w.writerow([i, int(j), repr(float(c))])
    return path


def write_trajectory(directory, traj: Trajectory, every: int = 1) -> Path:
    """Measure CSV per stored time (every ``every``-th, always the last) plus ``index.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ks = list(range(0, traj.times.size, every))
    if ks[-1] != traj.times.size - 1:
        ks.append(traj.times.size - 1)
    width = max(4, len(str(ks[-1])))
    rows = []
    for k in ks:
        name = f"state_{k:0{width}d}.csv"
        write_measure(directory / name, traj.state(k), float(traj.times[k]))
        rows.append([repr(float(traj.times[k])), name])
    write_rows(directory / "index.csv", ["time", "filename"], rows)
    return directory / "index.csv"


def read_trajectory_index(path) -> list[tuple[float, Path]]:
    path = Path(path)
    with path.open() as fh:
        return [(float(r["time"]), path.parent / r["filename"]) for r in csv.DictReader(fh)]


def write_control_field(path, u: ControlField) -> Path:
    d = u.positions.shape[1]
    chi = u.cutoff(u.positions)
    header = ["atom"] + [f"x{k + 1}" for k in range(d)] + [f"u{k + 1}" for k in range(d)] + ["chi"]
    rows = [
        [i, *map(repr, map(float, u.positions[i])), *map(repr, map(float, u.velocities[i])), repr(float(chi[i]))]
        for i in range(u.n)
    ]
    return write_rows(path, header, rows)


def write_rows(path, header: list[str], rows: Iterable) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, BoxDomain):
        return {"lower": list(obj.lower), "upper": list(obj.upper)}
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2) + "\n")
    return path
