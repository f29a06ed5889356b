import csv
import hashlib
import json
import math

import numpy as np
import pytest

from qotto.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--cycles", 3) == 0
    return out


def test_simulate_outputs(sim_dir):
    report = json.loads((sim_dir / "report.json").read_text())
    assert all(c["W_tot"] < 0 for c in report["cycles"])
    assert report["summary"]["Q_abs_ueV"] > 0
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["version"]
    for name, digest in manifest["outputs"].items():
        assert sha(sim_dir / name) == digest
    assert "saturation" not in report


def test_simulate_deterministic(sim_dir, tmp_path):
    assert run("simulate", "--out", tmp_path, "--cycles", 3) == 0
    for name in ("trajectory.csv", "rates.csv", "report.json"):
        assert sha(tmp_path / name) == sha(sim_dir / name)


def test_simulate_ten_cycles_saturation(tmp_path):
    assert run("simulate", "--out", tmp_path, "--cycles", 10) == 0
    sat = json.loads((tmp_path / "report.json").read_text())["saturation"]
    assert 0.5 <= sat["max"]["tau_sat"] <= 2.0


def test_simulate_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"device": {"Z_auxx": 35}}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "Z_auxx" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert run("simulate", "--out", tmp_path / "o", "--set", "schedule.n_cycles=0") == 2
    assert run("simulate", "--out", tmp_path / "o", "--set", "bogus") == 2
    assert run("simulate", "--out", tmp_path / "o", "--set", "device.gamma_eg0=1.0") == 2


def test_simulate_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "calibrated", "schedule": {"n_cycles": 1}}))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config_path"] == str(cfg)


def test_iv_generate_and_extract(tmp_path, capsys):
    assert run("iv", "--out", tmp_path / "gen") == 0
    rows = list(csv.DictReader(open(tmp_path / "gen" / "iv.csv")))
    assert len(rows) == 241
    assert run("iv", "--input", tmp_path / "gen" / "iv.csv", "--out", tmp_path / "fit") == 0
    res = json.loads((tmp_path / "fit" / "extraction.json").read_text())
    assert res["Delta_ueV"] == pytest.approx(186.0, rel=0.02)
    assert res["R_T_kohm"] == pytest.approx(25.7, rel=0.02)
    assert res["gamma_D"] == pytest.approx(4e-3, rel=0.02)
    empty = tmp_path / "empty.csv"
    empty.write_text("V_delta_over_e,I_nA\n")
    assert run("iv", "--input", empty, "--out", tmp_path / "x") == 4
    assert run("iv", "--out", tmp_path / "y", "--points", 2) == 2


def test_readout_pipeline(tmp_path, capsys):
    pops = ["0.5", "0.3", "0.15", "0.05"]
    assert run("readout", "sample", "--populations", *pops, "--n", 20000, "--seed", 3, "--out", tmp_path / "s") == 0
    assert run("readout", "sample", "--populations", *pops, "--n", 20000, "--seed", 3, "--out", tmp_path / "s2") == 0
    assert sha(tmp_path / "s" / "shots.csv") == sha(tmp_path / "s2" / "shots.csv")
    assert run("readout", "sample", "--populations", "0.5", "0.5", "--out", tmp_path / "bad") == 2
    assert run("readout", "fit", "--shots", tmp_path / "s" / "shots.csv", "--calibration",
               tmp_path / "s" / "model.json", "--out", tmp_path / "f") == 0
    assert json.loads((tmp_path / "f" / "model.json").read_text())["labels"] == ["g", "e", "f", "hij"]
    assert run("readout", "matrix", "--n-samples", 1e5, "--out", tmp_path / "m") == 0
    M = json.loads((tmp_path / "m" / "matrix.json").read_text())
    assert np.all(np.array(M["M"]).sum(1) <= 1)
    capsys.readouterr()
    assert run("readout", "correct", "--shots", tmp_path / "s" / "shots.csv", "--matrix",
               tmp_path / "m" / "matrix.json", "--out", tmp_path / "c") == 0
    p = json.loads((tmp_path / "c" / "populations.json").read_text())["populations"]
    assert np.allclose(p, [0.5, 0.3, 0.15, 0.05], atol=0.03)
    assert run("readout", "matrix", "--radius", 0, "--out", tmp_path / "z") == 2
    assert run("readout", "correct", "--shots", tmp_path / "missing.csv", "--matrix",
               tmp_path / "m" / "matrix.json", "--out", tmp_path / "c2") == 4


def test_ramsey_sweep(tmp_path):
    assert run("ramsey", "--out", tmp_path / "r") == 0
    rows = list(csv.DictReader(open(tmp_path / "r" / "ramsey_sweep.csv")))
    assert float(rows[0]["flux_amplitude"]) == 0.0 and float(rows[0]["detuning_radns"]) == 0.0
    assert rows[-1]["aliased_flag"] == "1"
    assert float(rows[-1]["detuning_radns"]) == pytest.approx(-2 * math.pi * 0.0824, rel=1e-6)
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"taus": 50}))
    assert run("ramsey", "--config", cfg, "--out", tmp_path / "x") == 2
    cfg.write_text(json.dumps({"flux_amplitudes": [0.0, 0.01, 0.02], "tau": 20}))
    assert run("ramsey", "--config", cfg, "--out", tmp_path / "y") == 0
