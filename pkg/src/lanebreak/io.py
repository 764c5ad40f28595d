"""CSV / JSON writers. Every CSV starts with a versioned comment line."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

CSV_VERSION = 1


def _open_csv(path, kind: str, header: list[str]):
    fh = open(path, "w", newline="", encoding="utf-8")
    fh.write(f"# lanebreak {kind} v{CSV_VERSION}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def read_csv(path) -> tuple[str, list[dict]]:
    """Returns (version comment, rows as dicts)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        rows = list(csv.DictReader(fh))
    return first, rows


def _fmt(x) -> str:
    return repr(float(x))


def write_trajectory_csv(traj, path) -> None:
    fh, w = _open_csv(path, "trajectory", ["time_s", "lane", "vehicle_index", "is_av", "position_m", "velocity_mps"])
    with fh:
        for t, st in zip(traj.times, traj.states):
            for name in ("L", "R"):
                lane = st.lane(name)
                for i in range(lane.n):
                    is_av = int(lane.av_present and i == lane.n - 1)
                    w.writerow([_fmt(t), name, i + 1, is_av, _fmt(lane.positions[i]), _fmt(lane.velocities[i])])


def write_variance_csv(traj, path) -> None:
    fh, w = _open_csv(path, "variance", ["time_s", "lane", "variance"])
    with fh:
        for name in ("L", "R"):
            tot = traj.total_variance(name)
            for t, v in zip(traj.times, tot):
                w.writerow([_fmt(t), name, _fmt(v)])


def write_rounds_csv(rounds, path) -> None:
    cols = ["round", "lane", "var_0", "delta_enter", "var_1", "delta_exit", "var_next",
            "bound_var_1", "bound_var_next"]
    fh, w = _open_csv(path, "rounds", cols)
    with fh:
        for r in rounds:
            d = r.to_json()
            w.writerow([d["round"], d["lane"]] + [_fmt(d[c]) for c in cols[2:]])


def write_bounds_csv(rounds, path) -> None:
    fh, w = _open_csv(path, "bounds", ["round", "lane", "point", "measured", "bound", "dominated"])
    with fh:
        for r in rounds:
            for point, meas, bnd in (("var_1", r.var_1, r.bound_var_1), ("var_next", r.var_next, r.bound_var_next)):
                w.writerow([r.round, r.lane, point, _fmt(meas), _fmt(bnd), int(meas <= bnd)])


def write_rows_csv(rows: list[dict], path, kind: str) -> None:
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0].keys())
    fh, w = _open_csv(path, kind, cols)
    with fh:
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], (float, np.floating)) else row[c] for c in cols])


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_default, allow_nan=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
