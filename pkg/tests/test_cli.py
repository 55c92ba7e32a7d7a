import hashlib
import json
import shutil
import subprocess

import numpy as np
import pytest

from sddestab import cli
from sddestab.corpus import scalar_family
from sddestab.model import AnalysisSettings, InitialFunction, SddeSystem, dump_system


@pytest.fixture
def ou(tmp_path):
    p = tmp_path / "ou.json"
    p.write_text(dump_system(scalar_family(-1.0, 0.0), InitialFunction.constant([1.0, 1.0]),
                             AnalysisSettings(t_max=4.0, paths=500, seed=3)))
    return p


@pytest.fixture
def mult(tmp_path):
    p = tmp_path / "mult.json"
    p.write_text(dump_system(scalar_family(-1.0, 0.5), InitialFunction.constant([1.0, 1.0]),
                             AnalysisSettings(t_max=3.0, paths=700, seed=11)))
    return p


def run(args, capsys):
    code = cli.run([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze(ou, tmp_path, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(["analyze", "--config", ou, "--out", out], capsys)
    assert code == 0
    doc = json.loads(stdout)
    assert doc["conclusion"] == "bounded" and doc["rule"] == "Thm-bou"
    text = (out / "verdict.json").read_text()
    assert json.loads(text) == doc
    man = json.loads((out / "analyze.manifest.json").read_text())
    assert man["outputs"]["verdict.json"] == hashlib.sha256(text.encode()).hexdigest()
    assert man["settings"]["seed"] == 3 and man["settings"]["threads"] == 1
    assert man["command"] == "analyze" and man["config"] == str(ou.resolve())


def test_overrides_recorded(ou, tmp_path, capsys):
    out = tmp_path / "o"
    code, _, _ = run(["moments", "--config", ou, "--out", out, "--tmax", "2", "--dt", "0.03125", "--seed", "9"],
                     capsys)
    assert code == 0
    man = json.loads((out / "moments.manifest.json").read_text())
    assert man["settings"]["t_max"] == 2.0 and man["settings"]["dt"] == 0.03125 and man["settings"]["seed"] == 9
    lines = (out / "moments.csv").read_text().splitlines()
    assert lines[0].startswith("t,M11,M12,M22") and len(lines) == 66


@pytest.mark.parametrize("args", [
    ["frobnicate"],
    [],
    ["analyze"],
    ["analyze", "--config", "/nonexistent/x.json"],
])
def test_usage_errors(args, capsys):
    code, _, err = run(args, capsys)
    assert code == 2 and "usage" in err


def test_bad_values(ou, tmp_path, capsys):
    code, _, err = run(["moments", "--config", ou, "--dt", "0.3"], capsys)
    assert code == 2 and "usage" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1, "k": 1, "A": [[-1]], "extra": 1}')
    code, _, err = run(["analyze", "--config", bad], capsys)
    assert code == 2 and "extra" in err
    code, _, _ = run(["simulate", "--config", ou, "--threads", "0"], capsys)
    assert code == 2


def test_runtime_failure_is_json(tmp_path, capsys):
    p = tmp_path / "unstable.json"
    p.write_text(dump_system(SddeSystem.decoupled(np.diag([0.5, -1.0]), mu=(1.0, 0.0))))
    code, _, err = run(["charfn", "--config", p, "--out", tmp_path / "x"], capsys)
    assert code == 1
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["command"] == "charfn" and diag["error"] == "ValueError" and "alpha0" in diag["message"]
    assert not (tmp_path / "x").exists()


def test_simulate_thread_independent(mult, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--config", mult, "--out", a, "--threads", "1"], capsys)[0] == 0
    assert run(["simulate", "--config", mult, "--out", b, "--threads", "3", "--checkpoints", "10"], capsys)[0] == 0
    assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()
    assert len((a / "simulate.csv").read_text().splitlines()) == 11


def test_reruns_byte_identical(mult, tmp_path, capsys):
    for cmd, name in (("analyze", "verdict.json"), ("roots", "roots.json"), ("beta0", "beta0.json")):
        a, b = tmp_path / (cmd + "1"), tmp_path / (cmd + "2")
        assert run([cmd, "--config", mult, "--out", a], capsys)[0] == 0
        assert run([cmd, "--config", mult, "--out", b], capsys)[0] == 0
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((tmp_path / "beta01" / "beta0.json").read_text())
    assert abs(doc["beta0"] - (-2 + 0.25)) < 1e-5
    roots = json.loads((tmp_path / "roots1" / "roots.json").read_text())
    assert abs(roots["spectral"]["alpha0"] + 1.0) < 1e-9


def test_charfn_and_laplace_check(mult, tmp_path, capsys):
    out = tmp_path / "c"
    assert run(["charfn", "--config", mult, "--out", out, "--re", "0", "0.5", "--samples", "21"], capsys)[0] == 0
    assert len((out / "charfn.csv").read_text().splitlines()) == 43
    assert run(["laplace-check", "--config", mult, "--out", out, "--samples", "4"], capsys)[0] == 0
    rows = (out / "laplace_check.csv").read_text().splitlines()
    assert rows[0].endswith("max_abs_diff,tolerance,pass") and len(rows) == 5
    assert all(r.endswith(",true") for r in rows[1:])


def test_jsonable():
    doc = cli.jsonable({"z": 1 + 2j, "x": float("inf"), "a": np.arange(2), "b": np.bool_(True)})
    assert doc == {"z": {"re": 1.0, "im": 2.0}, "x": None, "a": [0, 1], "b": True}


@pytest.mark.skipif(shutil.which("sddestab") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["sddestab", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("sddestab ")
    r = subprocess.run(["sddestab", "nope"], capture_output=True, text=True)
    assert r.returncode == 2
