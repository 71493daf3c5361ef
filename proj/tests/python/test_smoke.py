import json
import math
import os
import pathlib

import pytest

import phaseforge as pf

DATA = pathlib.Path(os.environ.get("PHASEFORGE_TEST_DATA", pathlib.Path(__file__).parents[1] / "data"))

MODEL = json.dumps({
    "baseline_time": 1.0,
    "motifs": [{"passes": ["licm", "gvn"], "multiplier": 0.5}],
    "failure_rates": {"p_no_ir": 0.0, "p_incorrect": 0.0, "p_broken": 0.0},
    "seed_salt": 4,
})


def test_order_round_trip():
    text = "-licm -cfl-anders-aa -reg2mem -licm -sroa"
    passes = pf.parse_phase_order(text)
    assert passes == ["licm", "cfl-anders-aa", "reg2mem", "licm", "sroa"]
    assert pf.render_phase_order(passes) == text


def test_bad_order_raises():
    with pytest.raises(ValueError):
        pf.parse_phase_order("-licm -Gvn")


def test_geometric_mean():
    values = [1.0, 4.0, 2.0]
    assert pf.geometric_mean(values) == pytest.approx(math.exp(sum(map(math.log, values)) / 3))
    with pytest.raises(ValueError):
        pf.geometric_mean([])


def test_compare_outputs():
    assert pf.compare_outputs([1.0, 2.0], [1.005, 2.0], 0.01, 1e-6)
    assert not pf.compare_outputs([1.0, 2.0], [1.02, 2.0], 0.01, 1e-6)
    assert pf.compare_outputs([0.0], [1e-7], 0.01, 1e-6)


def test_features_and_distance():
    f = pf.extract_features((DATA / "gemm.ir").read_text())
    assert len(f) == 24
    assert pf.cosine_distance(f, f) == pytest.approx(0.0, abs=1e-12)


def test_explore_and_reduce():
    records = pf.explore("k", MODEL, "licm\ngvn\nsroa\nsink\n", num_sequences=300, max_len=6, seed=9)
    assert len(records) == 300
    best = records[0]
    assert best["status"] in ("Valid", "ReusedFrom")
    assert "-licm -gvn" in best["order"]
    assert pf.reduce_order(MODEL, best["order"], 0.025) == "-licm -gvn"


def test_suggest_knn():
    a = [1.0] + [0.0] * 23
    b = [0.0, 1.0] + [0.0] * 22
    out = pf.suggest_knn(a, [("x", b, "-gvn"), ("y", a, "-licm")], 1)
    assert out == [("y", pytest.approx(0.0, abs=1e-12), "-licm")]


def test_cli_help():
    code, out, _ = pf.run_cli(["--help"])
    assert code == 0
    assert "explore" in out
