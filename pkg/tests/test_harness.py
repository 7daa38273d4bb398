from __future__ import annotations

import csv
import json

import pytest

from conftest import table1_ledger
from wirelessagent import harness, solvers, wireless
from wirelessagent.errors import CorpusParseError, DuplicateTaskId, EmptyLedger
from wirelessagent.harness import (
    BUNDLED_CORPUS,
    CorpusMetrics,
    RunLedgerEntry,
    RunSettings,
    compute_metrics,
    emit_report,
    load_corpus,
    run_corpus,
)
from wirelessagent.orchestrator import Status, TaskOutcome

EXPECTED_SAMPLE = {
    "swipt_sumrate": (Status.SOLVED, 1),
    "noma_power_allocation": (Status.SOLVED, 2),
    "ris_phase_config": (Status.EXHAUSTED, 3),
    "user_association": (Status.ABORTED, 0),
    "power_control": (Status.SOLVED, 2),
}


def test_load_bundled_corpus():
    tasks = load_corpus(BUNDLED_CORPUS)
    assert [t.task_id for t in tasks] == list(EXPECTED_SAMPLE)
    assert tasks[0].fixtures_ref == "swipt_happy_path"


def test_load_corpus_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("[]")
    assert load_corpus(p) == []
    p.write_text('[{"task_id": "a", "query": "q"}, {"task_id": "a", "query": "r"}]')
    with pytest.raises(DuplicateTaskId):
        load_corpus(p)
    p.write_text('[\n  {"task_id": "a", "query": "q"},\n  {"task_id": "b"}\n]')
    with pytest.raises(CorpusParseError) as exc:
        load_corpus(p)
    assert exc.value.line == 3
    p.write_text('[\n  {"task_id": "a",,}\n]')
    with pytest.raises(CorpusParseError) as exc:
        load_corpus(p)
    assert exc.value.line == 2
    p.write_text('{"task_id": "a"}')
    with pytest.raises(CorpusParseError):
        load_corpus(p)


@pytest.fixture(scope="module")
def sample_runs(tmp_path_factory):
    tasks = load_corpus(BUNDLED_CORPUS)
    seq = run_corpus(tasks, RunSettings(out_dir=tmp_path_factory.mktemp("seq")), parallelism=1)
    par = run_corpus(tasks, RunSettings(out_dir=tmp_path_factory.mktemp("par")), parallelism=4)
    return seq, par


def test_run_corpus_outcomes(sample_runs):
    seq, _ = sample_runs
    got = {e.task_id: (e.outcome.status, e.outcome.attempts_used) for e in seq}
    assert got == EXPECTED_SAMPLE
    assert [e.task_id for e in seq] == list(EXPECTED_SAMPLE)


def test_run_corpus_parallel_matches_sequential(sample_runs):
    seq, par = sample_runs
    assert [e.to_dict() for e in seq] == [e.to_dict() for e in par]


def test_missing_fixtures_isolated(tmp_path):
    tasks = load_corpus(BUNDLED_CORPUS)[:2]
    broken = harness.CorpusTask(tasks[1].task_id, tasks[1].query, fixtures_ref="does_not_exist")
    entries = run_corpus([tasks[0], broken], RunSettings(out_dir=tmp_path), parallelism=2)
    assert entries[0].outcome.status is Status.SOLVED
    assert entries[1].outcome.status is Status.ABORTED and entries[1].outcome.aborted_stage == "Knowledge"


def test_compute_metrics_table1_columns():
    m = compute_metrics(table1_ledger("Agentic AI Framework"))
    assert [m.formulation_rate.cell(), m.solved_rate.cell(), m.first_try_rate.cell()] == [
        "100.00% (25/25)", "72.00% (18/25)", "32.00% (8/25)"]
    assert m.avg_attempts == pytest.approx(2.12)
    m = compute_metrics(table1_ledger("Single LLM + PS"))
    assert [getattr(m, n).cell() for n, _ in harness.TABLE_ROWS] == [
        "56.00% (14/25)", "100.00% (25/25)", "88.00% (22/25)", "56.00% (14/25)", "20.00% (5/25)"]
    assert f"{m.avg_attempts:.2f}" == "2.44"


def test_compute_metrics_trivial_and_empty():
    one = [RunLedgerEntry("t", TaskOutcome(Status.SOLVED, 1, 1.0, True, True, True, True))]
    m = compute_metrics(one)
    assert all(getattr(m, n).fraction == 1.0 for n, _ in harness.TABLE_ROWS)
    assert m.avg_attempts == 1.0
    with pytest.raises(EmptyLedger):
        compute_metrics([])


def test_metrics_report_and_json_roundtrip(tmp_path):
    m = compute_metrics(table1_ledger("Agentic AI Framework"))
    txt, js = emit_report(m, tmp_path / "rep")
    table = txt.read_text()
    row = next(line for line in table.splitlines() if line.startswith("Solution Solved Rate"))
    assert "72.00% (18/25)" in row
    assert "Avg. Attempt Times" in table and "2.12" in table
    assert CorpusMetrics.from_dict(json.loads(js.read_text())) == m


def test_sweep_and_map_reports(tmp_path):
    cfg = wireless.ScenarioConfig()
    sweep = solvers.sweep_power(cfg, [40, 43], drops=1)
    (path,) = emit_report(sweep, tmp_path / "sweep.csv")
    assert len(list(csv.DictReader(path.open()))) == 2 * len(solvers.SOLVER_IDS)
    gm = wireless.gain_map(cfg, 5.0, 0)
    (path,) = emit_report(gm, tmp_path / "sub" / "map.csv")
    assert len(path.read_text().splitlines()) == gm.values.size + 1
    with pytest.raises(TypeError):
        emit_report(object(), tmp_path / "x")


def test_ledger_entry_roundtrip(tmp_path):
    entries = table1_ledger("Single LLM")[:3]
    path = harness.write_ledger(entries, tmp_path / "ledger.json")
    back = [RunLedgerEntry.from_dict(d) for d in json.loads(path.read_text())]
    assert [b.to_dict() for b in back] == [e.to_dict() for e in entries]
