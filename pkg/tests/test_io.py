import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flow_corpus import cut_annulus_flow, measure_flow
from shapeflow import io
from shapeflow.grid import Ball, GridDomain, ScalarGridField, ShapeMask, rasterize
from shapeflow.measures import CapacitaryMeasure, as_measure

DOM = GridDomain.cube(1.0, 13, 2)


def test_fmt():
    assert io.fmt(0.1) == "0.1"
    assert io.fmt(math.inf) == "inf" and io.fmt(-math.inf) == "-inf" and io.fmt(math.nan) == "nan"
    assert float(io.fmt(1 / 3)) == 1 / 3


def test_jsonable_converts_numpy_and_nonfinite():
    data = {"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True), "d": [math.inf, (np.int64(2),)]}
    out = io.jsonable(data)
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": True, "d": ["inf", [2]]}
    json.dumps(out, allow_nan=False)


def test_pgm_roundtrip_and_orientation(tmp_path):
    m = rasterize(Ball((0.3, 0.5), 0.3), DOM)
    io.write_pgm(m, tmp_path / "m.pgm")
    back = io.read_pgm(tmp_path / "m.pgm", DOM)
    assert np.array_equal(back.inside, m.inside)
    lines = (tmp_path / "m.pgm").read_text().splitlines()
    assert lines[:3] == ["P2", "13 13", "255"]
    # the disk sits in the upper half, so it shows in the first image rows
    top = sum(v == "255" for line in lines[3:9] for v in line.split())
    bottom = sum(v == "255" for line in lines[10:] for v in line.split())
    assert top > 0 and bottom == 0


def test_pgm_one_dimensional(tmp_path):
    dom = GridDomain.cube(1.0, 10, 1)
    m = rasterize(Ball((0.0,), 0.4), dom)
    io.write_pgm(m, tmp_path / "m.pgm")
    assert np.array_equal(io.read_pgm(tmp_path / "m.pgm", dom).inside, m.inside)
    with pytest.raises(ValueError):
        io.read_pgm(tmp_path / "m.pgm", DOM)


@given(st.integers(0, 10_000))
def test_mask_json_roundtrip(seed):
    rng = np.random.default_rng(seed)
    inside = rng.random(DOM.shape) < rng.random()
    m = ShapeMask(DOM, inside)
    data = json.loads(json.dumps(io.mask_to_json(m)))
    assert io.mask_from_json(data) == m


def test_mask_json_rejects_short_runs():
    data = io.mask_to_json(ShapeMask.empty(DOM))
    data["rle"][0][1] -= 1
    with pytest.raises(ValueError):
        io.mask_from_json(data)


def test_raw_roundtrip_field_and_measure(tmp_path):
    rng = np.random.default_rng(0)
    f = ScalarGridField(DOM, rng.standard_normal(DOM.shape))
    io.write_raw(f, tmp_path / "f.raw")
    back = io.read_raw(tmp_path / "f.raw")
    assert not isinstance(back, CapacitaryMeasure)
    assert back.domain == DOM and np.array_equal(back.values, f.values)

    mu = as_measure(rasterize(Ball((0, 0), 0.6), DOM).without_level())
    io.write_raw(mu, tmp_path / "mu.raw")
    back = io.read_raw(tmp_path / "mu.raw")
    assert isinstance(back, CapacitaryMeasure)
    assert back == mu
    assert np.isinf(back.as_array()).any()


def test_raw_one_dimensional(tmp_path):
    dom = GridDomain.cube(1.0, 7, 1)
    f = ScalarGridField(dom, np.linspace(0, 1, 7))
    io.write_raw(f, tmp_path / "f.raw")
    back = io.read_raw(tmp_path / "f.raw")
    assert back.domain == dom and np.array_equal(back.values, f.values)


def test_field_csv_spells_out_infinity(tmp_path):
    mu = CapacitaryMeasure.infinite_outside(rasterize(Ball((0, 0), 0.6), DOM))
    io.write_field_csv(mu, tmp_path / "mu.csv")
    with open(tmp_path / "mu.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "value"]
    assert len(rows) == 1 + DOM.size
    vals = [r[2] for r in rows[1:]]
    assert "inf" in vals and "0.0" in vals
    with pytest.raises(TypeError):
        io.write_field_csv(np.zeros(3), tmp_path / "x.csv")


def test_measure_trajectory_files(tmp_path):
    traj = measure_flow("quadratic")
    names = io.write_measure_trajectory(traj, tmp_path)
    assert names[0] == "series.csv" and len(names) == 1 + len(traj)
    with open(tmp_path / "series.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(traj)
    assert rows[0]["step_distance"] == ""
    assert float(rows[1]["J"]) == traj.values[1]
    state = io.read_raw(tmp_path / "state_00001.raw")
    assert np.array_equal(state.values, traj.states[1].values)


def test_shape_trajectory_files_are_deterministic(tmp_path):
    traj = cut_annulus_flow()
    a = io.write_shape_trajectory(traj, tmp_path / "a")
    b = io.write_shape_trajectory(traj, tmp_path / "b")
    assert a == b
    for name in a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "series.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["lambda_1"]) == traj.lambda1[0]
    assert int(rows[-1]["components"]) == traj.components[-1]
    assert io.read_pgm(tmp_path / "a" / "state_00001.pgm", traj.states[1].domain) == traj.states[1]


def test_write_json_is_sorted(tmp_path):
    io.write_json({"b": 1, "a": math.inf}, tmp_path / "x.json")
    text = (tmp_path / "x.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": "inf", "b": 1}
