"""Plain-text and raw file formats for masks, fields, measures and trajectories.

* Masks: plain PGM (``P2``, 0 outside, 255 inside) and a JSON descriptor with
  run-length-encoded cells.
* Fields and measures: CSV with one row per cell (``x, y, value``; ``inf`` for
  infinite measure values) and a raw block: one ASCII header line
  ``d n0 n1 lo0 hi0 lo1 hi1 flags`` followed by little-endian float64 values in
  C order.  ``flags = 1`` marks a measure whose infinite cells hold IEEE +inf.

Every writer produces byte-identical output for identical input.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .grid import GridDomain, ScalarGridField, ShapeMask
from .measures import CapacitaryMeasure

__all__ = [
    "fmt",
    "write_pgm",
    "read_pgm",
    "mask_to_json",
    "mask_from_json",
    "write_field_csv",
    "write_raw",
    "read_raw",
    "write_measure_trajectory",
    "write_shape_trajectory",
    "jsonable",
]

RAW_MEASURE_FLAG = 1


def fmt(x) -> str:
    """Shortest round-trip text for a float, ``inf``/``-inf``/``nan`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


# -- masks -----------------------------------------------------------------------------


def _image_rows(inside: np.ndarray) -> np.ndarray:
    # rows run from the top (largest y) down, columns along x
    if inside.ndim == 1:
        return inside[None, :]
    return inside.T[::-1]


def write_pgm(mask: ShapeMask, path) -> None:
    rows = _image_rows(mask.inside)
    lines = ["P2", f"{rows.shape[1]} {rows.shape[0]}", "255"]
    lines += [" ".join("255" if v else "0" for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path, domain: GridDomain) -> ShapeMask:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4 : 4 + w * h]]).reshape(h, w) > maxval // 2
    inside = vals[0] if domain.dim == 1 else vals[::-1].T
    if inside.shape != domain.shape:
        raise ValueError("image size does not match the domain")
    return ShapeMask(domain, inside)


def mask_to_json(mask: ShapeMask) -> dict:
    flat = mask.inside.ravel().astype(np.int8)
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    runs = [[int(flat[s]), int(n)] for s, n in zip(starts, lengths)]
    return {"domain": mask.domain.to_dict(), "rle": runs}


def mask_from_json(data: dict) -> ShapeMask:
    domain = GridDomain.from_dict(data["domain"])
    flat = np.concatenate([np.full(n, bool(v)) for v, n in data["rle"]]) if data["rle"] else np.zeros(0, bool)
    if flat.size != domain.size:
        raise ValueError("run lengths do not cover the grid")
    return ShapeMask(domain, flat.reshape(domain.shape))


# -- fields -----------------------------------------------------------------------------


def _values_of(obj):
    if isinstance(obj, CapacitaryMeasure):
        return obj.domain, obj.as_array(), True
    if isinstance(obj, ScalarGridField):
        return obj.domain, obj.values, False
    raise TypeError(f"cannot export {type(obj).__name__}")


def write_field_csv(obj, path) -> None:
    dom, vals, _ = _values_of(obj)
    centers = dom.centers()
    names = ["x", "y"][: dom.dim] + ["value"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for idx in np.ndindex(*dom.shape):
            wr.writerow([fmt(c[idx]) for c in centers] + [fmt(vals[idx])])


def write_raw(obj, path) -> None:
    dom, vals, is_measure = _values_of(obj)
    n1 = dom.shape[1] if dom.dim == 2 else 1
    lo1 = dom.lower[1] if dom.dim == 2 else 0.0
    hi1 = dom.upper[1] if dom.dim == 2 else 0.0
    header = [str(dom.dim), str(dom.shape[0]), str(n1), fmt(dom.lower[0]), fmt(dom.upper[0]),
              fmt(lo1), fmt(hi1), str(RAW_MEASURE_FLAG if is_measure else 0)]
    with open(path, "wb") as fh:
        fh.write((" ".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_raw(path):
    """Read a raw block back as a :class:`ScalarGridField` or :class:`CapacitaryMeasure`."""
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    parts = data[:nl].decode("ascii").split()
    if len(parts) != 8:
        raise ValueError("raw header must hold 8 values")
    d, n0, n1 = int(parts[0]), int(parts[1]), int(parts[2])
    lo0, hi0, lo1, hi1 = (float(p) for p in parts[3:7])
    flags = int(parts[7])
    if d == 1:
        dom = GridDomain((lo0,), (hi0,), (n0,))
    else:
        dom = GridDomain((lo0, lo1), (hi0, hi1), (n0, n1))
    vals = np.frombuffer(data[nl + 1 :], dtype="<f8").reshape(dom.shape).astype(float)
    if flags & RAW_MEASURE_FLAG:
        return CapacitaryMeasure.from_array(dom, vals)
    return ScalarGridField(dom, vals)


# -- trajectories ----------------------------------------------------------------------------


def write_measure_trajectory(traj, outdir, states: bool = True) -> list:
    """Series CSV plus one raw block per state; returns the written file names."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    md = traj.metric_derivative
    er = traj.energy_residuals
    rows = []
    for n, (t, J) in enumerate(zip(traj.times, traj.values)):
        if n == 0:
            rows.append([n, fmt(t), fmt(J), "", "", "", ""])
        else:
            rows.append([n, fmt(t), fmt(J), fmt(traj.distances[n - 1]), fmt(md[n - 1]), fmt(er[n - 1]),
                         fmt(traj.slopes[n - 1]) if traj.slopes else ""])
    names = ["series.csv"]
    with open(out / "series.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["n", "t", "J", "step_distance", "metric_derivative", "energy_residual", "slope_estimate"])
        wr.writerows(rows)
    if states:
        for n, w in enumerate(traj.states):
            name = f"state_{n:05d}.raw"
            write_raw(w, out / name)
            names.append(name)
    return names


def write_shape_trajectory(traj, outdir, states: bool = True) -> list:
    """Series CSV (with lambda columns) plus one PGM per state."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    k = max((lam.size for lam in traj.lambdas), default=0)
    header = ["n", "t"] + [f"lambda_{j + 1}" for j in range(k)] + ["volume", "perimeter", "step_symdiff",
                                                                   "objective", "components"]
    names = ["series.csv"]
    with open(out / "series.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for n, t in enumerate(traj.times):
            lam = traj.lambdas[n]
            lams = [fmt(lam[j]) if j < lam.size else "" for j in range(k)]
            step = fmt(traj.distances[n - 1]) if n > 0 else ""
            obj = fmt(traj.objectives[n - 1][1]) if n > 0 else fmt(traj.values[0])
            wr.writerow([n, fmt(t)] + lams + [fmt(traj.volumes[n]), fmt(traj.perimeters[n]), step, obj,
                                             traj.components[n]])
    if states:
        for n, m in enumerate(traj.states):
            if m is None:
                continue
            name = f"state_{n:05d}.pgm"
            write_pgm(m, out / name)
            names.append(name)
    return names


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")
