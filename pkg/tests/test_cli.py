import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from hbart.cli import main

FAST = ["--niter", "150", "--burnin", "40", "--m", "15", "--mprime", "4", "--snapshot-every", "1"]


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(d.iterdir()) if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "80", "--n-test", "40", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_simulate_columns(sim):
    with open(sim / "train.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["x", "y", "f_true", "s_true"]
    assert len(rows) == 80
    for r in rows[:10]:
        x = float(r["x"])
        assert float(r["f_true"]) == pytest.approx(4 * x * x)
        assert float(r["s_true"]) == pytest.approx(0.2 * np.exp(2 * x))
    assert len(open(sim / "test.csv").readlines()) == 41


def test_pipeline_emits_files_and_is_deterministic(sim, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["fit", "--data", str(sim / "train.csv"), "--seed", "5", *FAST,
                     "--out", str(out)]) == 0
    assert _digest(a) == _digest(b)
    for name in ("draws.csv", "snapshot.txt", "acceptance.csv", "activity.csv", "manifest.json"):
        assert (a / name).is_file(), name
    man = json.loads((a / "manifest.json").read_text())
    assert man["subcommand"] == "fit" and man["prior"]["m"] == 15
    assert man["settings"]["seed"] == 5

    assert main(["diagnose", "--fit", str(a), "--heldout", str(sim / "test.csv"),
                 "--sigma-ref", "0.6"]) == 0
    diag = a / "diagnose"
    for name in ("hevidence.csv", "hevidence.svg", "percentiles.csv", "percentiles.svg",
                 "estat.txt", "trace.csv", "trace.svg", "manifest.json"):
        assert (diag / name).is_file(), name
    assert float((diag / "estat.txt").read_text().split()[-1]) >= 0
    first = _digest(diag)
    assert main(["replay", str(diag / "manifest.json")]) == 0
    assert _digest(diag) == first

    pred = tmp_path / "pred.csv"
    assert main(["predict", "--fit", str(a), "--x", str(sim / "test.csv"), "--out", str(pred)]) == 0
    lines = pred.read_text().splitlines()
    assert lines[0] == "xid,f_mean,f_lo,f_hi,s_mean,s_lo,s_hi" and len(lines) == 41
    assert (tmp_path / "pred.csv.manifest.json").is_file()
    pd = tmp_path / "pd.csv"
    assert main(["predict", "--fit", str(a), "--x", str(sim / "test.csv"), "--mode", "predictive",
                 "--out", str(pd)]) == 0
    assert len(pd.read_text().splitlines()) == 1 + 110


def test_replay_fit_is_byte_identical(sim, tmp_path):
    out = tmp_path / "f"
    assert main(["fit", "--data", str(sim / "train.csv"), "--seed", "1", *FAST, "--out", str(out)]) == 0
    before = _digest(out)
    man_before = (out / "manifest.json").read_bytes()
    assert main(["replay", str(out / "manifest.json")]) == 0
    assert _digest(out) == before
    assert (out / "manifest.json").read_bytes() == man_before


def test_bart_fit_emits_sigma_trace(sim, tmp_path):
    out = tmp_path / "bart"
    assert main(["fit", "--data", str(sim / "train.csv"), "--model", "bart", "--niter", "140",
                 "--burnin", "20", "--m", "10", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["prior"]["m_prime"] == 0
    assert main(["diagnose", "--fit", str(out), "--in-sample"]) == 0
    rows = (out / "diagnose" / "trace.csv").read_text().splitlines()
    assert rows[0].startswith("iter,sigma_or_sbar")
    assert len(rows) == 121
    sig = [float(r.split(",")[1]) for r in rows[1:]]
    assert all(s > 0 for s in sig)
    # sigma is constant across points in a BART fit, so the point columns repeat it
    assert all(float(r.split(",")[2]) == float(r.split(",")[1]) for r in rows[1:])


def test_cv_command(sim, tmp_path):
    out = tmp_path / "cv"
    assert main(["cv", "--data", str(sim / "train.csv"), "--kappa-grid", "2,5", "--folds", "2",
                 "--niter", "130", "--burnin", "20", "--m", "8", "--mprime", "3",
                 "--out", str(out)]) == 0
    lines = (out / "cv.csv").read_text().splitlines()
    assert lines[0] == "kappa,fold,estat" and len(lines) == 5
    assert float((out / "selected.txt").read_text()) in (2.0, 5.0)
    assert (out / "cv.svg").is_file()


def _err(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("hbart: error: code=")
    return err[0]


def test_usage_error_exit_code(capsys):
    assert main(["fit"]) == 1
    assert "kind=usage" in _err(capsys)
    assert main(["nonsense"]) == 1
    _err(capsys)


def test_data_error_exit_code(tmp_path, capsys):
    assert main(["fit", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    assert "kind=data" in _err(capsys)
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n0.1,1\n0.2,NA\n0.3,2\n")
    assert main(["fit", "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
    line = _err(capsys)
    assert "row 3" in line


def test_bad_sampler_settings_are_usage_errors(sim, tmp_path, capsys):
    assert main(["fit", "--data", str(sim / "train.csv"), "--niter", "10", "--burnin", "10",
                 "--out", str(tmp_path / "o")]) == 1
    _err(capsys)


def test_module_entry_point(sim):
    r = subprocess.run([sys.executable, "-m", "hbart", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("hbart ")
