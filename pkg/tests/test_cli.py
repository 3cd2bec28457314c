import json
import subprocess
import sys

import numpy as np
import pytest

from mnbreg.cli import main
from mnbreg.datasets import seizure_path

SEIZ = str(seizure_path())
MODEL = ["--data", SEIZ, "--id", "id", "--response", "Y", "--terms", "trt,period,trt:period",
         "--offset", "log:weeks"]


def run(cmd, out, *extra):
    return main([cmd, *MODEL, "--out", str(out), "--threads", "1", *extra])


def read_json(path):
    return json.loads(path.read_text())


def test_fit_outputs(tmp_path):
    assert run("fit", tmp_path, "--drop", "49") == 0
    out = read_json(tmp_path / "fit.json")
    rows = {r["parameter"]: r for r in out["fit"]["coefficients"]}
    assert rows["phi"]["estimate"] == pytest.approx(1.607, abs=5e-3)
    assert rows["trt:period"]["estimate"] == pytest.approx(-0.105, abs=5e-3)
    assert out["deletion"]["prd"]["phi"] == pytest.approx(-28.21, abs=1.0)
    man = read_json(tmp_path / "manifest.json")
    assert set(man) >= {"command", "input_digest", "seed", "options", "version", "timestamp"}
    assert man["command"] == "fit" and man["input_digest"].startswith("sha256:")


def test_influence_subject_weight_peaks_at_49(tmp_path):
    assert run("influence", tmp_path, "--scheme", "weight", "--level", "subject") == 0
    lines = (tmp_path / "local_influence.csv").read_text().splitlines()
    rows = [ln.split(",") for ln in lines[1:]]
    top = max(rows, key=lambda r: abs(float(r[3])))
    assert top[1] == "49"


@pytest.mark.parametrize("cmd,extra,files", [
    ("fit", [], ["fit.json"]),
    ("residuals", ["--seed", "3"], ["residuals.csv"]),
    ("envelope", ["--seed", "3", "--nsim", "19"], ["envelope.csv"]),
    ("influence", [], ["global_influence.csv", "influence.json"]),
    ("influence", ["--scheme", "dispersion"], ["local_influence.csv", "influence.json"]),
])
def test_reruns_are_byte_identical(tmp_path, cmd, extra, files):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(cmd, a, *extra) == 0 and run(cmd, b, *extra) == 0
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    ma, mb = read_json(a / "manifest.json"), read_json(b / "manifest.json")
    ma.pop("timestamp"), mb.pop("timestamp")
    assert ma == mb


def test_envelope_columns(tmp_path):
    assert run("envelope", tmp_path, "--seed", "1", "--nsim", "19", "--band", "0.9") == 0
    head, *rows = (tmp_path / "envelope.csv").read_text().splitlines()
    assert head == "index,id,theoretical,lower,median,upper,observed"
    assert len(rows) == 59


def test_min_max_envelope(tmp_path):
    assert run("envelope", tmp_path, "--seed", "1", "--nsim", "21", "--min-max") == 0
    rows = [r.split(",") for r in (tmp_path / "envelope.csv").read_text().splitlines()[1:]]
    assert all(float(r[3]) <= float(r[4]) <= float(r[5]) for r in rows)


def test_simulate(tmp_path):
    cfg = tmp_path / "study.cfg"
    cfg.write_text("generator = poisson_glg\nphi_true = 3\nn = 100\nR = 1\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    res = read_json(out / "simulation.json")
    assert res["replications"] == 1 and res["config"]["seed"] == 9
    assert read_json(out / "manifest.json")["seed"] == 9


def _csv(tmp_path, text):
    p = tmp_path / "in.csv"
    p.write_text(text)
    return str(p)


def test_exit_codes(tmp_path):
    bad = _csv(tmp_path, "id,Y,x\n1,3,0.1\n1,-1,0.2\n")
    base = ["--id", "id", "--response", "Y", "--terms", "x", "--out", str(tmp_path / "o")]
    assert main(["fit", "--data", bad, *base]) == 2
    assert main(["fit", "--data", bad, "--id", "id", "--response", "Z",
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["fit", "--data", str(tmp_path / "absent.csv"), *base]) == 2
    rng = np.random.default_rng(0)
    flat = "id,Y,x\n" + "".join(f"{i},5,{rng.normal():.4f}\n" for i in range(30) for _ in range(3))
    assert main(["fit", "--data", _csv(tmp_path, flat), *base]) == 3
    assert main(["influence", *MODEL, "--scheme", "explanatory", "--covariate", "trt",
                 "--out", str(tmp_path / "o")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mnbreg", "fit", *MODEL, "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "fit.json").exists()
