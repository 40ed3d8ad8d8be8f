import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mrn import cli, mrf
from mrn import unet as un
from mrn.spaces import MultiResFunction, h01_function_eval


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    mrf.write_mrf("one.mrf", MultiResFunction("interval", 0, np.ones(1)))
    mrf.write_mrf("c16.mrf", MultiResFunction("interval", 4, np.full(16, -1.25)))
    mrf.write_mrf("img.mrf", MultiResFunction("square", 3, np.full(64, 0.5)))
    return tmp_path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_spectrum_example(work):
    argv = "spectrum --resolution 4 --t 1.0 --schedule linear --samples 100000 --seed 7 --out r.json".split()
    assert cli.run(argv) == 0
    rep = json.load(open("r.json"))
    ratios = [b["ratio"] for b in rep["bands"]]
    var1 = rep["bands"][1]["variance"]
    rel = [b["variance"] / var1 for b in rep["bands"][1:]]
    np.testing.assert_allclose(rel, [1, 2, 4, 8], rtol=0.05)
    assert ratios[0] == 1.0
    assert [r["band"] for r in _rows("r.csv")] == ["0", "1", "2", "3", "4"]
    man = json.load(open("r.json.manifest.json"))
    assert man["seed"] == 7 and man["config"]["samples"] == 100000 and "created" in man


def test_pde_example(work):
    assert cli.run(["pde", "--rhs", "one.mrf", "--resolution", "1", "--out", "u.mrf", "--report", "e.csv"]) == 0
    u = mrf.read_mrf("u.mrf")
    assert u.basis == "h01"
    assert float(h01_function_eval(u, 0.5)) == -0.125
    rows = _rows("e.csv")
    assert len(rows) == 1024 and float(rows[0]["u"]) == 0.0 and float(rows[-1]["u"]) == 0.0


def test_dwt_constant_has_zero_details(work):
    assert cli.run(["dwt", "--input", "c16.mrf", "--levels", "3", "--out", "p.json"]) == 0
    rows = _rows("p.csv")
    assert all(float(r["value"]) == 0.0 for r in rows if r["band"].startswith("D"))
    assert sum(r["band"] == "A3" for r in rows) == 2
    assert cli.run(["dwt", "--input", "img.mrf", "--levels", "2", "--out", "q.json", "--csv", "q2.csv"]) == 0
    rows = _rows("q2.csv")
    assert all(float(r["value"]) == 0.0 for r in rows if not r["band"].startswith("A"))


def test_tri_pipeline(work):
    assert cli.run(["tri", "synth", "--kind", "plane", "--depth", "3", "--out", "t.mrf"]) == 0
    assert cli.run(["tri", "encode", "--input", "t.mrf", "--out", "e.mrf"]) == 0
    assert cli.run(["tri", "decode", "--input", "e.mrf", "--out", "d.mrf"]) == 0
    assert open("t.mrf", "rb").read() == open("d.mrf", "rb").read()
    assert cli.run(["tri", "pool", "--input", "t.mrf", "--depth", "1", "--out", "p.mrf"]) == 0
    assert mrf.read_mrf("p.mrf").resolution == 1
    assert cli.run(["tri", "haar", "--input", "t.mrf", "--out", "h.mrf"]) == 0
    h = mrf.read_mrf("h.mrf")
    assert h.basis == "haar" and h.domain == "triangle"
    assert cli.run(["tri", "pool", "--input", "t.mrf", "--depth", "5", "--out", "x.mrf"]) == 5
    assert cli.run(["tri", "encode", "--input", "c16.mrf", "--out", "x.mrf"]) == 4
    assert not os.path.exists("x.mrf")


def test_train_staged_then_eval(work):
    json.dump({"spec": {"J": 2, "base_resolution": 2, "width": 2},
               "data": {"samples": 8, "resolution": 3, "seed": 0},
               "train": {"optimizer": {"kind": "adam", "lr": 0.01}, "steps": 4, "seed": 0}},
              open("run.json", "w"))
    assert cli.run(["train-staged", "--config", "run.json", "--freeze", "--out", "n.uns", "--trace", "tr.csv"]) == 0
    state = un.load_unet("n.uns")
    assert state.frozen == {0, 1, 2}
    rows = _rows("tr.csv")
    assert {r["stage"] for r in rows} == {"1", "2"} and len(rows) == 10
    mrf.write_mrf("v.mrf", MultiResFunction("interval", 3, np.arange(8.0)))
    assert cli.run(["unet-eval", "--net", "n.uns", "--input", "v.mrf", "--resolution", "3", "--out", "w.mrf"]) == 0
    w = mrf.read_mrf("w.mrf")
    np.testing.assert_array_equal(w.coeffs, un.unet_forward(state, mrf.read_mrf("v.mrf")).coeffs)


def test_train_synth_report(work):
    argv = ["train-synth", "--target", "square", "--pre", "abs", "--seed", "1", "--steps", "5", "--depth", "4",
            "--report", "s.json"]
    assert cli.run(argv) == 0
    rep = json.load(open("s.json"))
    assert rep["seed"] == 1 and len(rep["trace"]) == 6 and rep["max_weight_norm"] < 1


def test_thm1_table(work):
    json.dump({"samples": 50, "resolution": 2, "seed": 1}, open("suite.json", "w"))
    assert cli.run(["thm1", "--config", "suite.json", "--out", "t.csv"]) == 0
    assert len(_rows("t.csv")) == 9
    assert all(json.load(open("t.checks.json")).values())


def test_consistency_report(work):
    argv = "consistency --fine 4 --coarse 3 --t 0.5 --samples 20000 --out c.json".split()
    assert cli.run(argv) == 0
    rep = json.load(open("c.json"))
    assert rep["seed"] == 0 and rep["max_variance_ratio_error"] < 0.06
    assert len(_rows("c.csv")) == 8


@pytest.mark.parametrize("argv,code", [
    (["spectrum", "--resolution", "3", "--t", "0.5", "--bogus", "--out", "z.json"], 2),
    (["frobnicate"], 2),
    (["dwt", "--input", "missing.mrf", "--levels", "1", "--out", "z.json"], 7),
    (["dwt", "--input", "bad.mrf", "--levels", "1", "--out", "z.json"], 3),
    (["dwt", "--input", "c16.mrf", "--levels", "5", "--out", "z.json"], 4),
    (["consistency", "--fine", "2", "--coarse", "3", "--t", "0.5", "--out", "z.json"], 5),
    (["spectrum", "--resolution", "3", "--t", "0.5", "--samples", "50", "--out", "z.json"], 8),
    (["pde", "--rhs", "one.mrf", "--resolution", "0", "--out", "z.mrf"], 5),
    (["thm1", "--config", "bad.json", "--out", "z.csv"], 3),
    (["spectrum", "--resolution", "3", "--t", "0.5", "--out", "nodir/z.json"], 7),
])
def test_error_codes_and_no_partial_outputs(work, capsys, argv, code):
    open("bad.mrf", "wb").write(b"MRF1\x00")
    open("bad.json", "w").write('{"samples": ')
    assert cli.run(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"mrn: error code={code} kind=")
    assert not any(p.startswith("z.") for p in os.listdir("."))


def test_rerun_is_byte_identical(work):
    argv = "spectrum --resolution 3 --t 0.3 --schedule exp --samples 5000 --seed 2 --out a.json".split()
    assert cli.run(argv) == 0
    first = open("a.json", "rb").read(), open("a.csv", "rb").read()
    assert cli.run(argv) == 0
    assert (open("a.json", "rb").read(), open("a.csv", "rb").read()) == first


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "mrn.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("dwt", "pde", "tri", "unet-eval", "train-synth", "train-staged", "thm1", "spectrum", "consistency"):
        assert cmd in out.stdout
    assert "MRN_THREADS" in out.stdout
