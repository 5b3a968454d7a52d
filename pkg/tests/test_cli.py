import csv
import json
import os
import subprocess
import sys

import pytest

from conftest import SMALL_CONFIG
from stochns.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main
from stochns.reports import read_report


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_CONFIG, encoding="utf-8")
    return p


@pytest.fixture
def simulated(tmp_path, cfg_path, capsys):
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg_path), "--output", str(out), "--seeds", "2"])
    return code, out, capsys.readouterr().out


def test_simulate_writes_report_and_series(simulated):
    code, out, text = simulated
    doc = read_report(out / "report.json")
    assert code == (EXIT_FAIL if any(c["verdict"] == "fail" and c["kind"] == "bound"
                                     for c in doc["bounds"]["checks"]) else EXIT_OK)
    assert len(doc["trajectories"]) == 2 and doc["ensemble"]["m"] == 2
    series = sorted(os.listdir(out / "series"))
    assert series == ["trajectory_0000.csv", "trajectory_0001.csv"]
    with open(out / "series" / series[0], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "kinetic_energy", "epsilon", "noise_work_increment", "balance_partial"]
    assert len(rows) == 1 + 200 // 20 + 1
    assert "zeroth_law" in text and "report:" in text


def test_audit_round_trip(simulated, capsys):
    code, out, _ = simulated
    assert main(["audit", "--report", str(out / "report.json")]) == code
    assert "upper_bound" in capsys.readouterr().out


def test_audit_detects_tampering(simulated, tmp_path):
    _, out, _ = simulated
    doc = json.loads((out / "report.json").read_text())
    for c in doc["bounds"]["checks"]:
        if c["name"] == "upper_bound":
            c["verdict"] = "fail" if c["verdict"] != "fail" else "pass"
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(doc))
    assert main(["audit", "--report", str(bad)]) == EXIT_ERROR


def test_audit_fail_exit_code(simulated, tmp_path):
    _, out, _ = simulated
    doc = json.loads((out / "report.json").read_text())
    doc["audit_inputs"]["eps_mean"] = 1e6
    from stochns.bounds import AuditInputs, audit

    doc["bounds"] = audit(AuditInputs.from_dict(doc["audit_inputs"])).to_dict()
    p = tmp_path / "fail.json"
    p.write_text(json.dumps(doc))
    assert main(["audit", "--report", str(p)]) == EXIT_FAIL


def test_config_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL_CONFIG.replace("grid.n = 8", "grid.n = 7"))
    assert main(["simulate", "--config", str(bad), "--output", str(tmp_path / "o")]) == EXIT_ERROR
    assert "n must be even" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == EXIT_ERROR
    assert main(["audit", "--report", str(tmp_path / "nope.json")]) == EXIT_ERROR


def test_bad_seed_override(cfg_path, tmp_path):
    assert main(["simulate", "--config", str(cfg_path), "--output", str(tmp_path), "--seeds", "0"]) == EXIT_ERROR


def test_validate_linear(cfg_path, capsys):
    code = main(["validate-linear", "--config", str(cfg_path), "--seeds", "3"])
    text = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_FAIL)
    assert text.count("pol ") == 12 and "G^2/2" in text


def test_sweep(cfg_path, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", str(cfg_path), "--key", "physics.nu", "--values", "0.5,0.25",
                 "--paired-key", "time.dt", "--paired-values", "0.01,0.005", "--seeds", "2",
                 "--output", str(out)])
    assert code in (EXIT_OK, EXIT_FAIL)
    with open(out / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["physics.nu", "eps_mean", "stderr_eps", "U", "zeroth_law"]
    assert [r[0] for r in rows[1:]] == ["0.5", "0.25"]
    for i in range(2):
        doc = read_report(out / f"sweep_{i:02d}" / "report.json")
        assert doc["config"]["values"]["nu"] == [0.5, 0.25][i]
        assert doc["config"]["values"]["dt"] == [0.01, 0.005][i]
    assert main(["sweep", "--config", str(cfg_path), "--key", "physics.nu", "--values", "0.5",
                 "--paired-key", "time.dt", "--paired-values", "0.01,0.02"]) == EXIT_ERROR


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "stochns", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("simulate", "audit", "validate-linear", "sweep"):
        assert sub in r.stdout
