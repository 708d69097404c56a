"""Command-line front end: ``shapeflow <command> --config <path> [--out <dir>] [--seed <int>]``.

The config is a JSON object with ``"schema": "shapeflow/1"``.  Unknown keys
anywhere in it are errors.  Every run writes ``summary.json`` to the output
directory, echoing the fully resolved config and the table of defaults.

Exit codes: 0 success, 2 invalid config or output directory, 3 solver
failure, 4 invariant violation detected after the run.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .capmeasure import gamma_distance, remark_case_ordering
from .errors import ConfigError, DomainViolationError, InvariantViolationError, IterationLimitError, ShapeflowError
from .flow_measure import MeasureFlowConfig, annulus_case_study, flow_diagnostics, local_slope_estimate, run_measure_flow
from .flow_shape import (
    RadialState,
    ShapeFlowConfig,
    ball_flow_reference,
    detect_jumps,
    hausdorff_flow_run,
    run_shape_flow,
    square_perturbation_study,
)
from .functionals import FunctionalSpec
from .grid import Annulus, Ball, Box, Difference, GridDomain, ScalarGridField, Union, rasterize, set_distances
from .measures import EPS_X
from .pde import torsion
from .projection import project_onto_X

__all__ = ["main", "execute", "resolve_config", "DEFAULTS", "SCHEMA"]

SCHEMA = "shapeflow/1"
COMMANDS = ("measure-flow", "shape-flow", "ball-benchmark", "annulus-case", "square-case", "remark32-case", "distance")

# tolerances and sizes used when the config leaves them out; echoed in every summary
DEFAULTS = {
    "measure-flow": {
        "domain": {"half_width": 1.2, "cells": 64, "dim": 2},
        "initial": {"type": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "functional": {"kind": "energy", "k": 1, "volume_penalty": 0.0, "perimeter_penalty": 0.0},
        "epsilon": 0.01,
        "T": 0.1,
        "partner_scale": None,
        "projection_tol": 1e-9,
        "prox_method": "auto",
        "slope_probes": 8,
        "write_states": True,
    },
    "shape-flow": {
        "domain": {"half_width": 1.2, "cells": 49, "dim": 2},
        "initial": {"type": "ball", "center": [0.0, 0.0], "radius": 0.5},
        "functional": {"kind": "lambda_k", "k": 1, "volume_penalty": 0.0, "perimeter_penalty": 0.0},
        "epsilon": 0.01,
        "T": 0.03,
        "strategy": "greedy",
        "batch_size": 16,
        "ring_width": 1,
        "max_single_trials": 32,
        "radial_n": 10000,
        "scan_points": 64,
        "write_states": True,
    },
    "ball-benchmark": {"R0": 1.0, "dim": 2, "domain_radius": 2.0, "epsilon": 1e-3, "T": 0.05, "radial_n": 10000},
    "annulus-case": {"epsilon": [1e-3, 1e-2, 1e-1], "n": 10000, "s_points": 200, "tol": 1e-8},
    "square-case": {
        "epsilon": 0.01,
        "cells_per_side": 128,
        "candidates": [
            {"kind": "uniform"},
            {"kind": "bump", "side": "bottom", "position": math.pi / 2, "width": 0.3},
            {"kind": "bump", "side": "bottom", "position": 0.15, "width": 0.3},
        ],
    },
    "remark32-case": {"R": [1.05, 1.5, 1.9], "domain": {"half_width": 2.0, "cells": 128, "dim": 2}, "tol": 1e-9},
    "distance": {
        "domain": {"half_width": 1.2, "cells": 64, "dim": 2},
        "a": {"type": "ball", "center": [0.0, 0.0], "radius": 0.8},
        "b": {"type": "ball", "center": [0.0, 0.0], "radius": 0.8},
    },
}

# tolerances used by the post-run invariant checks
CHECKS = {"energy_inequality": 1e-10, "monotonicity": 1e-8, "contraction": 1e-6}

_SHAPE_KEYS = {
    "ball": {"type", "center", "radius"},
    "annulus": {"type", "center", "inner", "outer"},
    "box": {"type", "lower", "upper"},
    "union": {"type", "parts"},
    "difference": {"type", "base", "removed"},
}
_DOMAIN_KEYS = {"half_width", "cells", "dim", "center", "lower", "upper"}
_FUNCTIONAL_KEYS = {"kind", "k", "volume_penalty", "perimeter_penalty"}


# -- config ---------------------------------------------------------------------------


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")


def _check_shape(spec, where):
    if not isinstance(spec, dict) or spec.get("type") not in _SHAPE_KEYS:
        raise ConfigError(f"{where} needs a type from {sorted(_SHAPE_KEYS)}")
    _check_keys(spec, _SHAPE_KEYS[spec["type"]], where)
    missing = sorted(_SHAPE_KEYS[spec["type"]] - set(spec))
    if missing:
        raise ConfigError(f"{where} is missing {missing}")
    if spec["type"] == "union":
        for i, p in enumerate(spec["parts"]):
            _check_shape(p, f"{where}.parts[{i}]")
    elif spec["type"] == "difference":
        _check_shape(spec["base"], f"{where}.base")
        _check_shape(spec["removed"], f"{where}.removed")


def _merge(defaults, given, where):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {where}.{key}")
        if key == "domain":
            _check_keys(val, _DOMAIN_KEYS, f"{where}.domain")
            out[key] = val if ("lower" in val or "upper" in val) else {**defaults[key], **val}
        elif key == "functional":
            _check_keys(val, _FUNCTIONAL_KEYS, f"{where}.functional")
            out[key] = {**defaults[key], **val}
        else:
            out[key] = val
    return out


def resolve_config(raw: dict) -> dict:
    """Validate a raw config and fill in defaults.

    Raises
    ------
    ConfigError
        On a wrong schema, an unknown command or key, or a malformed section.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; choose from {list(COMMANDS)}")
    body = {k: v for k, v in raw.items() if k not in ("schema", "command", "seed")}
    out = _merge(DEFAULTS[cmd], body, cmd)
    for key in ("initial", "a", "b"):
        if key in out:
            _check_shape(out[key], f"{cmd}.{key}")
    if cmd == "square-case":
        for i, c in enumerate(out["candidates"]):
            _check_keys(c, {"kind", "side", "position", "width"}, f"square-case.candidates[{i}]")
    return {"schema": SCHEMA, "command": cmd, "seed": raw.get("seed", 0), **out}


def build_domain(spec: dict) -> GridDomain:
    try:
        if "lower" in spec or "upper" in spec:
            return GridDomain(tuple(spec["lower"]), tuple(spec["upper"]), tuple(np.atleast_1d(spec["cells"])))
        return GridDomain.cube(float(spec["half_width"]), int(spec["cells"]), int(spec.get("dim", 2)),
                               spec.get("center"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain {spec}: {exc}") from exc


def build_primitive(spec: dict):
    t = spec["type"]
    try:
        if t == "ball":
            return Ball(tuple(spec["center"]), float(spec["radius"]))
        if t == "annulus":
            return Annulus(tuple(spec["center"]), float(spec["inner"]), float(spec["outer"]))
        if t == "box":
            return Box(tuple(spec["lower"]), tuple(spec["upper"]))
        if t == "union":
            return Union(*[build_primitive(p) for p in spec["parts"]])
        return Difference(build_primitive(spec["base"]), build_primitive(spec["removed"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad shape {spec}: {exc}") from exc


def _mask(spec, domain):
    try:
        return rasterize(build_primitive(spec), domain)
    except DomainViolationError as exc:
        raise ConfigError(str(exc)) from exc


def _functional(spec) -> FunctionalSpec:
    try:
        return FunctionalSpec(spec["kind"], int(spec["k"]), float(spec["volume_penalty"]),
                              float(spec["perimeter_penalty"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# -- commands ---------------------------------------------------------------------------


def _measure_flow(cfg, out):
    dom = build_domain(cfg["domain"])
    J = _functional(cfg["functional"])
    if not J.supports_measures:
        raise ConfigError(f"{J.kind} is not defined on measures")
    w0 = torsion(_mask(cfg["initial"], dom))
    partner = None
    if cfg["partner_scale"] is not None:
        v = ScalarGridField(dom, float(cfg["partner_scale"]) * w0.values)
        partner = project_onto_X(v)
    try:
        mcfg = MeasureFlowConfig(float(cfg["epsilon"]), float(cfg["T"]), J, float(cfg["projection_tol"]),
                                 True, partner, cfg["prox_method"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    traj = run_measure_flow(mcfg, w0)
    diag = flow_diagnostics(traj, J, traj.partner)
    probes = []
    if cfg["slope_probes"] > 0 and len(traj) > 1:
        w = traj.states[-1]
        probes = [local_slope_estimate(J, w, 1e-3, samples=int(cfg["slope_probes"]), seed=int(cfg["seed"]))]
    files = io.write_measure_trajectory(traj, out, states=bool(cfg["write_states"]))
    if traj.partner is not None:
        files += ["partner/" + f for f in io.write_measure_trajectory(traj.partner, out / "partner", states=False)]

    checks = {"energy_inequality": bool(diag.max_energy_residual <= CHECKS["energy_inequality"])}
    if J.decreasing_in_w and diag.monotone is not None:
        checks["monotone"] = bool(diag.monotone)
    if diag.contraction_excess is not None:
        checks["contraction"] = bool(diag.contraction_excess <= CHECKS["contraction"])
    checks["in_X"] = all(s.violation() <= EPS_X for s in traj.states)
    result = {"steps": len(traj) - 1, "final_value": traj.values[-1], "diagnostics": diag.as_dict(),
              "slope_probe": probes, "files": files}
    return result, checks, traj.error


def _shape_flow(cfg, out):
    dom = build_domain(cfg["domain"])
    J = _functional(cfg["functional"])
    M0 = _mask(cfg["initial"], dom)
    eps, T = float(cfg["epsilon"]), float(cfg["T"])
    if cfg["strategy"] == "hausdorff":
        traj = hausdorff_flow_run(J, M0, eps, T, scan_points=int(cfg["scan_points"]))
    else:
        try:
            scfg = ShapeFlowConfig(eps, T, J, cfg["strategy"], int(cfg["batch_size"]), int(cfg["ring_width"]),
                                   cfg["max_single_trials"], int(cfg["radial_n"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        traj = run_shape_flow(scfg, M0)
    files = io.write_shape_trajectory(traj, out, states=bool(cfg["write_states"]))
    res = np.array([b - a for a, b in traj.objectives])
    chain = traj.is_chain()
    checks = {
        "energy_inequality": bool(res.max(initial=-math.inf) <= CHECKS["energy_inequality"]),
        "components_nonincreasing": traj.components_nonincreasing(),
    }
    if cfg["strategy"] == "hausdorff":
        checks["decreasing_chain"] = all(b.issubset(a) for a, b in zip(traj.states[:-1], traj.states[1:]))
    else:
        checks["superset_chain"] = chain
    lam1 = traj.lambda1
    result = {
        "strategy": traj.strategy,
        "provenance": {
            "greedy": "batch growth ranked by the Hadamard density; a descent step, not a global argmin",
            "radial": "golden-section search over ball radii with the 1D radial solver",
            "hausdorff": "erosion by the optimal distance, coarse scan plus golden-section search",
        }[traj.strategy],
        "steps": len(traj) - 1,
        "final_value": traj.values[-1],
        "max_step_residual": float(res.max(initial=0.0)),
        "lambda1_jumps": detect_jumps(lam1) if np.all(np.isfinite(lam1)) else [],
        "step_parameters": traj.step_parameters,
        "notes": traj.notes,
        "files": files,
    }
    return result, checks, traj.error


def _ball_benchmark(cfg, out):
    eps, T, d = float(cfg["epsilon"]), float(cfg["T"]), int(cfg["dim"])
    R0, Rd = float(cfg["R0"]), float(cfg["domain_radius"])
    if not 0 < R0 < Rd:
        raise ConfigError("need 0 < R0 < domain_radius")
    try:
        scfg = ShapeFlowConfig(eps, T, FunctionalSpec("lambda_k"), "radial", radial_n=int(cfg["radial_n"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    traj = run_shape_flow(scfg, RadialState(R0, (), (0.0,) * d, d, Rd))
    t = np.asarray(traj.times)
    R = np.asarray(traj.radii)
    ref = ball_flow_reference(R0, d, t)
    rel = np.abs(R - ref) / ref
    with open(out / "ball_benchmark.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "R_numeric", "R_closed_form", "relative_error"])
        for row in zip(t, R, ref, rel):
            wr.writerow([io.fmt(v) for v in row])
    res = np.array([b - a for a, b in traj.objectives])
    checks = {
        "energy_inequality": bool(res.max(initial=-math.inf) <= CHECKS["energy_inequality"]),
        "radii_nondecreasing": bool(np.all(np.diff(R) >= 0)),
    }
    result = {"max_relative_error": float(rel.max()), "final_radius": float(R[-1]),
              "final_closed_form": float(ref[-1]), "files": ["ball_benchmark.csv"]}
    return result, checks, traj.error


def _annulus_case(cfg, out):
    eps_list = cfg["epsilon"] if isinstance(cfg["epsilon"], list) else [cfg["epsilon"]]
    s = np.linspace(0.01, 1.99, int(cfg["s_points"]))
    reports = [annulus_case_study(float(e), n=int(cfg["n"]), s_values=s, tol=float(cfg["tol"])).as_dict()
               for e in eps_list]
    result = {"reports": reports}
    # the predicted behaviours are reported, not enforced as invariants
    return result, {}, None


def _square_case(cfg, out):
    rep = square_perturbation_study(float(cfg["epsilon"]), cfg["candidates"], int(cfg["cells_per_side"]))
    return rep.as_dict(), {}, None


def _remark32_case(cfg, out):
    dom = build_domain(cfg["domain"])
    Rs = cfg["R"] if isinstance(cfg["R"], list) else [cfg["R"]]
    rows = []
    for R in Rs:
        try:
            rep = remark_case_ordering(float(R), dom, float(cfg["tol"]))
        except DomainViolationError as exc:
            raise ConfigError(str(exc)) from exc
        rows.append({"R": rep.R, "torsions_ordered": rep.torsions_ordered, "measures_ordered": rep.measures_ordered,
                     "min_gap": rep.min_gap, "cells_violating": rep.cells_violating})
    return {"cases": rows}, {}, None


def _distance(cfg, out):
    dom = build_domain(cfg["domain"])
    a, b = _mask(cfg["a"], dom), _mask(cfg["b"], dom)
    d = set_distances(a, b).as_dict()
    d["gamma"] = gamma_distance(a, b)
    return {"distances": d}, {}, None


_HANDLERS = {
    "measure-flow": _measure_flow,
    "shape-flow": _shape_flow,
    "ball-benchmark": _ball_benchmark,
    "annulus-case": _annulus_case,
    "square-case": _square_case,
    "remark32-case": _remark32_case,
    "distance": _distance,
}


def execute(raw: dict, out, seed: int | None = None) -> int:
    """Run one command from a raw config dict; returns the exit status."""
    try:
        if seed is not None:
            raw = {**raw, "seed": seed}
        cfg = resolve_config(raw)
        out = Path(out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write_test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
        if cfg["command"] == "shape-flow" and cfg["strategy"] not in ("greedy", "radial", "hausdorff"):
            raise ConfigError(f"unknown strategy {cfg['strategy']!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    summary = {"config": cfg, "defaults": {"commands": DEFAULTS, "checks": CHECKS}, "status": "ok"}
    try:
        result, checks, error = _HANDLERS[cfg["command"]](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IterationLimitError, InvariantViolationError, ShapeflowError, np.linalg.LinAlgError) as exc:
        summary.update(status="solver_failure", error=str(exc))
        io.write_json(summary, out / "summary.json")
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    summary.update(result=result, invariants=checks)
    code = 0
    if error is not None:
        summary.update(status="solver_failure", error=error)
        code = 3
    elif not all(checks.values()):
        summary["status"] = "invariant_violation"
        code = 4
    io.write_json(summary, out / "summary.json")
    return code


def _thread_limit():
    """Context capping BLAS/OpenMP pools at ``SHAPEFLOW_THREADS`` threads, if set."""
    n = os.environ.get("SHAPEFLOW_THREADS", "").strip()
    if not n.isdigit():
        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="shapeflow", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", default="shapeflow_out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized probes")
    args = parser.parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if isinstance(raw, dict) and raw.get("command", args.command) != args.command:
        print(f"config error: config is for {raw.get('command')!r}, not {args.command!r}", file=sys.stderr)
        return 2
    if isinstance(raw, dict):
        raw = {**raw, "command": args.command}
    with _thread_limit():
        return execute(raw, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
