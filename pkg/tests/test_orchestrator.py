from __future__ import annotations

import shutil

import pytest

from wirelessagent.agents import Backend, BackendConfig
from wirelessagent.errors import BackendUnavailable
from wirelessagent.memory import Stage, SystemMemory
from wirelessagent.orchestrator import (
    OrchestratorConfig,
    PlanDocument,
    Status,
    TaskOutcome,
    TaskSpec,
    Verdict,
    classify_feedback,
    extract_code,
    ledger_flags,
    load_task,
    parse_plan,
    parse_verdict,
    run_task,
)
from wirelessagent.tools import ExecutionResult, ExitClass, LiteratureSearch, SearchConfig
from wirelessagent.validation import Branch, error_report


def run(fixture_dir, tmp_path, task=None, config=None, search=None):
    task = task or load_task_default()
    memory = SystemMemory()
    outcome = run_task(
        task,
        config or OrchestratorConfig(),
        Backend(BackendConfig(fixture_dir=fixture_dir)),
        search or LiteratureSearch(),
        memory,
        tmp_path / "ws",
    )
    return outcome, memory


def load_task_default():
    from wirelessagent.harness import BUNDLED_TASKS

    return load_task(BUNDLED_TASKS / "swipt_sumrate.json")


def copy_set(fixture_root, name, dest):
    shutil.copytree(fixture_root / name, dest)
    return dest


# ------------------------------------------------------------------ parsing


def test_parse_plan_blocks():
    text = "intro\n```OBJECTIVE\nmax R\n```\n```VARIABLES\nW\n```\n```CONSTRAINTS\n\n```\n```ALGORITHM\n1. a\n2) b\n- c\n```\n```SCENARIO\n{\"M\": 6}\n```"
    plan = parse_plan(text)
    assert plan.objective == "max R" and plan.algorithm_steps == ["a", "b", "c"]
    assert plan.scenario == {"M": 6}
    assert not plan.formulation_complete  # empty CONSTRAINTS
    plan.constraints = "P <= Pmax"
    assert plan.formulation_complete
    assert PlanDocument.from_dict(plan.to_dict()).to_dict() == plan.to_dict()


def test_parse_verdict():
    assert parse_verdict("looks fine\nVERDICT: APPROVE") == (Verdict.APPROVE, "looks fine", False)
    v, notes, warn = parse_verdict("VERDICT: REVISE add EH constraint")
    assert v is Verdict.REVISE and notes == "add EH constraint" and not warn
    v, _, warn = parse_verdict("I approve of this plan")
    assert v is Verdict.REVISE and warn


def test_extract_code_prefers_python_block():
    assert extract_code("```text\nx\n```\n```python\nprint(1)\n```") == "print(1)\n"
    assert extract_code("```\nprint(2)\n```") == "print(2)\n"
    assert extract_code("no code") is None


def test_classify_feedback():
    ok = ExecutionResult(ExitClass.SUCCESS, 0, "", "", 0.1, [])
    bad = ExecutionResult(ExitClass.NONZERO_EXIT, 1, "", "Traceback", 0.1, [])
    slow = ExecutionResult(ExitClass.TIMEOUT, None, "", "", 5.0, [])
    assert classify_feedback(ok, error_report("x")) is Branch.WIRELESS_VALIDITY
    assert classify_feedback(bad, None) is Branch.ERROR_HANDLING
    assert classify_feedback(slow, None) is Branch.ERROR_HANDLING
    with pytest.raises(ValueError):
        classify_feedback(ok, None)
    with pytest.raises(ValueError):
        classify_feedback(bad, error_report("x"))


def test_config_and_outcome_invariants():
    with pytest.raises(ValueError):
        OrchestratorConfig(max_attempts=0)
    with pytest.raises(ValueError):
        OrchestratorConfig(solve_score_threshold=1.5)
    with pytest.raises(ValueError):
        TaskOutcome(Status.SOLVED, 1, None, True, True, True, True)
    with pytest.raises(ValueError):
        TaskOutcome(Status.SOLVED, 2, 1.0, True, True, True, True)
    with pytest.raises(ValueError):
        TaskSpec("t", "  ")


# ------------------------------------------------------------------ full runs


def test_happy_path(fixture_root, tmp_path):
    outcome, mem = run(fixture_root / "swipt_happy_path", tmp_path)
    assert outcome.status is Status.SOLVED and outcome.attempts_used == 1
    assert outcome.formulation_flag and outcome.generated_flag and outcome.executed_flag and outcome.first_try_flag
    assert outcome.final_score == 1.0
    # two ReAct searches recorded, and the digest's best hit is a SWIPT paper
    assert len(mem.query("swipt_sumrate", kind="search_exchange")) == 2
    digest = mem.query("swipt_sumrate", kind="literature_digest")[0].payload
    assert "SWIPT" in digest["hits"][0]["title"] and len(digest["hits"]) <= 5
    # draft 0 revised, draft 1 approved
    assert len(mem.query("swipt_sumrate", kind="plan_draft")) == 2
    assert [r.payload["verdict"] for r in mem.query("swipt_sumrate", kind="plan_review")] == ["REVISE", "APPROVE"]
    # stage ordering is monotone for non-score records
    orders = [r.stage.order for r in mem.query("swipt_sumrate") if r.stage not in (Stage.SCORE, Stage.OUTCOME)]
    assert orders == sorted(orders)
    # workspace paths never leak into the ledger
    assert str(tmp_path) not in mem.canonical_text()


def test_error_injection_branch_order(fixture_root, tmp_path):
    outcome, mem = run(fixture_root / "swipt_error_injection", tmp_path)
    assert outcome.status is Status.SOLVED and outcome.attempts_used == 2 and not outcome.first_try_flag
    branches = [r.payload["report"]["branch"] for r in mem.query("swipt_sumrate", kind="score_report")]
    assert branches == ["ErrorHandling", "WirelessValidity"]
    # the error text reached the coding agent in the next prompt
    prompts = [r.payload["prompt"] for r in mem.query("swipt_sumrate", kind="agent_exchange")
               if r.payload["key"] == "coding/stage4/iter1"]
    assert "SyntaxError" in prompts[0]


def test_all_fail_exhausts(fixture_root, tmp_path):
    outcome, mem = run(fixture_root / "swipt_all_fail", tmp_path)
    assert outcome.status is Status.EXHAUSTED and outcome.attempts_used == 3
    assert outcome.executed_flag and outcome.generated_flag and not outcome.first_try_flag
    reports = [r.payload for r in mem.query("swipt_sumrate", kind="score_report")]
    assert [p["report"]["branch"] for p in reports] == ["WirelessValidity", "WirelessValidity", "ErrorHandling"]
    # validity feedback carries the serialised score report
    prompt = [r.payload["prompt"] for r in mem.query("swipt_sumrate", kind="agent_exchange")
              if r.payload["key"] == "coding/stage4/iter1"][0]
    assert "[FAIL] power_budget" in prompt


def test_max_attempts_caps_stage_four(fixture_root, tmp_path):
    outcome, _ = run(fixture_root / "swipt_all_fail", tmp_path, config=OrchestratorConfig(max_attempts=1))
    assert outcome.status is Status.EXHAUSTED and outcome.attempts_used == 1


def test_missing_verdict_marker_and_rejected_plan(fixture_root, tmp_path):
    from wirelessagent.harness import load_corpus, BUNDLED_CORPUS

    tasks = {t.task_id: t for t in load_corpus(BUNDLED_CORPUS)}
    outcome, mem = run(fixture_root / "ris_phase_config", tmp_path, task=tasks["ris_phase_config"].to_task_spec())
    reviews = [r.payload for r in mem.query("ris_phase_config", kind="plan_review")]
    assert reviews[0]["protocol_warning"] and reviews[0]["verdict"] == "REVISE"
    assert outcome.status is Status.EXHAUSTED

    outcome, mem = run(fixture_root / "user_association", tmp_path, task=tasks["user_association"].to_task_spec())
    final = mem.query("user_association", kind="plan_final")[0].payload
    assert not final["approved"] and not final["plan"]["formulation_complete"]
    notes = [r.payload["message"] for r in mem.query("user_association", kind="stage_note")]
    assert any("PlanRejected" in n for n in notes)
    assert outcome.status is Status.ABORTED and outcome.aborted_stage == "Data"
    assert outcome.attempts_used == 0 and not outcome.formulation_flag
    checks = [{c["check_id"]: c["passed"] for c in r.payload["checks"]} for r in mem.query("user_association", kind="data_review")]
    assert not checks[0]["execution"]
    assert checks[1]["execution"] and not checks[1]["dimensions"]
    assert checks[2]["dimensions"] and not checks[2]["path_loss_trend"]


def test_missing_fixture_aborts(fixture_root, tmp_path):
    fx = copy_set(fixture_root, "swipt_happy_path", tmp_path / "fx")
    (fx / "coding/stage4/iter0.txt").unlink()
    outcome, _ = run(fx, tmp_path)
    assert outcome.status is Status.ABORTED and outcome.aborted_stage == "Simulation"
    assert outcome.formulation_flag and not outcome.generated_flag


def test_backend_retry_then_abort(fixture_root, tmp_path):
    class Flaky(Backend):
        def __init__(self, config, failures):
            super().__init__(config)
            self.failures = failures

        def complete(self, message, **kw):
            if self.failures > 0:
                self.failures -= 1
                raise BackendUnavailable("transient")
            return super().complete(message, **kw)

    cfg = BackendConfig(fixture_dir=fixture_root / "swipt_happy_path")
    for failures, status in ((1, Status.SOLVED), (2, Status.ABORTED)):
        mem = SystemMemory()
        out = run_task(load_task_default(), OrchestratorConfig(), Flaky(cfg, failures), LiteratureSearch(), mem, tmp_path / "ws")
        assert out.status is status
        if status is Status.ABORTED:
            assert out.aborted_stage == "Knowledge"


def test_search_unavailable_degrades(fixture_root, tmp_path):
    search = LiteratureSearch(SearchConfig(mode="online", endpoint="http://127.0.0.1:9/x", timeout_s=1))
    outcome, mem = run(fixture_root / "swipt_happy_path", tmp_path, search=search)
    digest = mem.query("swipt_sumrate", kind="literature_digest")[0].payload
    assert digest["degraded"] and digest["hits"] == []
    assert outcome.status is Status.SOLVED


def test_empty_corpus_and_direct_search(fixture_root, tmp_path):
    search = LiteratureSearch(SearchConfig(corpus_dir=tmp_path / "empty"))
    outcome, mem = run(fixture_root / "swipt_happy_path", tmp_path, search=search,
                       config=OrchestratorConfig(direct_search=True))
    assert len(mem.query("swipt_sumrate", kind="search_exchange")) == 1
    assert mem.query("swipt_sumrate", kind="literature_digest")[0].payload["hits"] == []
    assert outcome.status is Status.SOLVED


def test_memory_must_be_empty_for_task(fixture_root, tmp_path):
    mem = SystemMemory()
    mem.append("swipt_sumrate", Stage.QUERY, "Literature", "task_query", {"query": "q", "domain_tags": []})
    with pytest.raises(ValueError):
        run_task(load_task_default(), OrchestratorConfig(), Backend(BackendConfig(fixture_dir=fixture_root)),
                 LiteratureSearch(), mem, tmp_path)


def test_reward_model_combines_scores(fixture_root, tmp_path):
    fx = copy_set(fixture_root, "swipt_happy_path", tmp_path / "fx")
    (fx / "scoring/stage4").mkdir(parents=True)
    (fx / "scoring/stage4/iter0.txt").write_text("0.5")
    outcome, mem = run(fx, tmp_path, config=OrchestratorConfig(max_attempts=1, use_reward_model=True, solve_score_threshold=0.6))
    # rule checks all pass but the combined score falls under the threshold
    assert outcome.status is Status.EXHAUSTED
    report = mem.query("swipt_sumrate", kind="score_report")[0].payload["report"]
    assert report["score"] == 0.5


def test_ledger_flags_are_pure_functions_of_memory(fixture_root, tmp_path):
    outcome, mem = run(fixture_root / "swipt_happy_path", tmp_path)
    flags = ledger_flags(mem, "swipt_sumrate")
    assert flags == {"formulation": True, "generated": True, "executed": True}
