from __future__ import annotations

import csv
import json

from wirelessagent.cli import dispatch


def test_run_happy_path(tmp_path, swipt_task_file, capsys):
    code = dispatch(["run", "--task", str(swipt_task_file), "--fixtures", "swipt_happy_path", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert json.loads(out)["status"] == "Solved"
    assert json.loads((tmp_path / "outcome.json").read_text())["attempts_used"] == 1
    code = dispatch(["inspect", "--ledger", str(tmp_path / "ledger.jsonl"), "--task", "swipt_sumrate"])
    assert code == 0 and "task_outcome" in capsys.readouterr().out


def test_run_exhausted_returns_one(tmp_path, swipt_task_file, capsys):
    code = dispatch(["run", "--task", str(swipt_task_file), "--fixtures", "swipt_all_fail", "--out", str(tmp_path)])
    assert code == 1
    assert json.loads(capsys.readouterr().out)["status"] == "Exhausted"


def test_run_with_config_file_and_max_attempts(tmp_path, swipt_task_file, capsys):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"orchestrator": {"max_attempts": 3}, "backend": {"mode": "scripted"}}))
    code = dispatch(["--config", str(conf), "run", "--task", str(swipt_task_file), "--fixtures",
                     "swipt_all_fail", "--max-attempts", "2", "--out", str(tmp_path / "o")])
    assert code == 1
    assert json.loads(capsys.readouterr().out)["attempts_used"] == 2


def test_sweep_smoke(tmp_path, capsys):
    code = dispatch(["sweep", "power", "--drops", "2", "--seed", "7", "--grid", "40", "43", "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "sweep_power.csv").open()))
    assert len(rows) == 6 and {r["solver"] for r in rows} == {"ZF", "WMMSE", "SCA"}


def test_gainmap(tmp_path, capsys):
    assert dispatch(["gainmap", "--step", "3", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert dispatch(["gainmap", "--step", "3", "--deterministic", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gainmap.csv").exists() and (tmp_path / "gainmap_deterministic.csv").exists()


def test_bench(tmp_path, capsys):
    assert dispatch(["bench", "--parallel", "2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "Solution Solved Rate" in out and "60.00% (3/5)" in out
    assert (tmp_path / "metrics.txt").exists() and (tmp_path / "metrics.json").exists()


def test_usage_errors(tmp_path, capsys):
    assert dispatch(["frobnicate"]) == 2
    assert dispatch([]) == 2
    assert dispatch(["run"]) == 2
    assert dispatch(["run", "--task", str(tmp_path / "missing.json")]) == 2
    assert dispatch(["sweep", "power", "--drops", "0"]) == 2
    assert dispatch(["inspect", "--ledger", str(tmp_path / "none.jsonl"), "--task", "x"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err
