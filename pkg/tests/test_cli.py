import csv
import json
import math
import os
import subprocess
import sys

import pytest

from shapeflow import cli
from shapeflow.errors import ConfigError


def config(command, **body):
    return {"schema": cli.SCHEMA, "command": command, **body}


def run(tmp_path, command, name="out", **body):
    out = tmp_path / name
    code = cli.execute(config(command, **body), out)
    summary = json.loads((out / "summary.json").read_text()) if (out / "summary.json").exists() else None
    return code, summary


def test_resolve_fills_defaults():
    cfg = cli.resolve_config(config("shape-flow", functional={"kind": "energy"}))
    assert cfg["functional"] == {"kind": "energy", "k": 1, "volume_penalty": 0.0, "perimeter_penalty": 0.0}
    assert cfg["epsilon"] == cli.DEFAULTS["shape-flow"]["epsilon"]
    assert cfg["seed"] == 0


@pytest.mark.parametrize(
    "raw",
    [
        {"schema": "shapeflow/0", "command": "distance"},
        {"schema": cli.SCHEMA, "command": "teleport"},
        config("distance", colour="red"),
        config("shape-flow", functional={"kind": "energy", "speed": 2}),
        config("distance", a={"type": "ball", "center": [0, 0]}),
        config("distance", a={"type": "hexagon"}),
        config("square-case", candidates=[{"kind": "uniform", "height": 1}]),
    ],
)
def test_resolve_rejects_bad_configs(raw):
    with pytest.raises(ConfigError):
        cli.resolve_config(raw)


def test_config_errors_exit_2(tmp_path):
    assert cli.execute(config("distance", colour="red"), tmp_path / "o") == 2
    assert cli.execute(config("shape-flow", strategy="annealing"), tmp_path / "o") == 2
    assert cli.execute(config("shape-flow", epsilon=-1.0), tmp_path / "o") == 2


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.execute(config("distance"), blocker / "sub") == 2


def test_solver_failure_exits_3(tmp_path):
    empty = {"type": "difference", "base": {"type": "ball", "center": [0.0, 0.0], "radius": 0.5},
             "removed": {"type": "ball", "center": [0.0, 0.0], "radius": 0.9}}
    code, summary = run(tmp_path, "shape-flow", initial=empty, T=0.01)
    assert code == 3
    assert summary["status"] == "solver_failure" and summary["error"]


def test_invariant_violation_exits_4(tmp_path, monkeypatch):
    # no step can beat a tolerance of minus infinity
    monkeypatch.setitem(cli.CHECKS, "energy_inequality", -math.inf)
    code, summary = run(tmp_path, "ball-benchmark", T=0.005, epsilon=1e-3)
    assert code == 4
    assert summary["status"] == "invariant_violation"
    assert summary["invariants"]["energy_inequality"] is False


def test_distance_of_identical_disks(tmp_path):
    code, summary = run(tmp_path, "distance")
    assert code == 0
    d = summary["result"]["distances"]
    assert all(v == 0 for v in d.values())


def test_summary_echoes_config_and_defaults(tmp_path):
    code, summary = run(tmp_path, "distance", domain={"half_width": 1.0, "cells": 32})
    assert code == 0
    assert summary["config"] == json.loads(json.dumps(cli.resolve_config(config("distance", domain={
        "half_width": 1.0, "cells": 32}))))
    assert summary["defaults"]["checks"] == cli.CHECKS
    assert set(summary["defaults"]["commands"]) == set(cli.COMMANDS)


def test_ball_benchmark_csv(tmp_path):
    code, summary = run(tmp_path, "ball-benchmark", T=0.01)
    assert code == 0
    with open(tmp_path / "out" / "ball_benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "R_numeric", "R_closed_form", "relative_error"]
    assert len(rows) == 11
    assert summary["result"]["max_relative_error"] < 2e-2


def test_annulus_case_reports(tmp_path):
    code, summary = run(tmp_path, "annulus-case", epsilon=[1e-3, 1e-1], n=2000, s_points=40)
    assert code == 0
    reps = summary["result"]["reports"]
    assert len(reps) == 2
    assert all(r["relaxation_at_first_step"] for r in reps)


def test_measure_flow_with_partner(tmp_path):
    code, summary = run(tmp_path, "measure-flow", domain={"half_width": 1.2, "cells": 24}, T=0.03,
                        partner_scale=0.5, slope_probes=2)
    assert code == 0
    assert all(summary["invariants"].values())
    assert set(summary["invariants"]) >= {"energy_inequality", "monotone", "contraction", "in_X"}
    assert (tmp_path / "out" / "state_00003.raw").exists()
    assert (tmp_path / "out" / "partner" / "series.csv").exists()


def test_shape_flow_strategies(tmp_path):
    dom = {"half_width": 1.2, "cells": 33}
    code, s = run(tmp_path, "shape-flow", "g", domain=dom, T=0.02)
    assert code == 0 and s["invariants"]["superset_chain"]
    code, s = run(tmp_path, "shape-flow", "h", domain=dom, T=0.1, epsilon=0.05, strategy="hausdorff",
                  functional={"kind": "volume"})
    assert code == 0 and s["invariants"]["decreasing_chain"]
    code, s = run(tmp_path, "shape-flow", "r", domain=dom, T=0.02, strategy="radial")
    assert code == 0 and s["result"]["strategy"] == "radial"


def test_seeded_runs_are_deterministic(tmp_path):
    body = dict(domain={"half_width": 1.2, "cells": 20}, T=0.02, slope_probes=3)
    cli.execute(config("measure-flow", **body), tmp_path / "a", seed=5)
    cli.execute(config("measure-flow", **body), tmp_path / "b", seed=5)
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["seed"] == 5


def test_main_reads_config_file(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config("distance")))
    monkeypatch.setenv("SHAPEFLOW_THREADS", "1")
    assert cli.main(["distance", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    # the positional command must agree with the file
    assert cli.main(["square-case", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["distance", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(config("distance", domain={"half_width": 1.0, "cells": 16})))
    env = {**os.environ, "SHAPEFLOW_THREADS": "1"}
    proc = subprocess.run([sys.executable, "-m", "shapeflow", "distance", "--config", str(path), "--out",
                           str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["status"] == "ok"
