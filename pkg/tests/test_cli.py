import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from fedaudit.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run_cli(*args, hashseed="0"):
    env = dict(os.environ, PYTHONHASHSEED=hashseed)
    return subprocess.run([sys.executable, "-m", "fedaudit", *args], capture_output=True, text=True,
                          env=env, check=False)


def test_gas(capsys):
    assert main(["gas", "--agents", "50", "--rounds", "5"]) == 0
    assert capsys.readouterr().out.strip() == "123568375"


def test_score_csv(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("0.7,0.7,0.7\n0.7,0.7,0.7\n0,0,1\n")
    assert main(["score", "--matrix", str(path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "agent,m,m_scaled,d,d_scaled,p"
    assert [line.split(",")[-1] for line in lines[1:]] == ["1.000000", "1.000000", "0.000000"]


def test_score_micro(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("800000,600000\n800000,600000\n")
    assert main(["score", "--matrix", str(path), "--micro"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    assert [r.split(",")[-1] for r in rows] == ["1000000", "750000"]


def test_score_bad_matrix(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("0.5,0.5\n0.5\n")
    assert main(["score", "--matrix", str(path)]) == 2


def test_gen_data(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--rows", "25", "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 26 and lines[0].endswith(",label")


def test_run(tmp_path):
    assert main(["run", "--config", str(ROOT / "configs" / "example.toml"), "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["seed"] == 1 and report["summary"]["conserved"]
    assert (tmp_path / "transactions.jsonl").exists() and (tmp_path / "ledger.csv").exists()


def test_suite_gas_exit_code(tmp_path):
    assert main(["suite", "gas", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["passed"] is True


def test_failed_criterion_exits_nonzero(tmp_path, monkeypatch):
    import fedaudit.cli as cli
    monkeypatch.setattr(cli, "run_suite", lambda exp, seed: {
        "criteria": [{"name": "x", "value": 1, "op": "<", "threshold": 0, "passed": False}],
        "passed": False, "runs": {}})
    assert main(["suite", "exp1", "--out", str(tmp_path)]) == 1


def test_missing_config_reports_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.toml"), "--seed", "0", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("experiment", ["exp3"])
def test_report_identical_across_processes(tmp_path, experiment):
    a, b = tmp_path / "a", tmp_path / "b"
    r1 = run_cli("suite", experiment, "--out", str(a), hashseed="1")
    r2 = run_cli("suite", experiment, "--out", str(b), hashseed="2")
    assert r1.returncode == 0 and r2.returncode == 0, r1.stderr + r2.stderr
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert "PASS" in r1.stdout


def test_run_identical_across_processes(tmp_path):
    outs = []
    for i, hs in enumerate(("3", "4")):
        out = tmp_path / str(i)
        r = run_cli("run", "--config", str(ROOT / "configs" / "example.toml"), "--seed", "2", "--out", str(out),
                    hashseed=hs)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    for name in ("report.json", "transactions.jsonl", "ledger.csv", "scores.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
