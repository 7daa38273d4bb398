from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wirelessagent.agents import (
    Action,
    AgentMessage,
    AgentRole,
    Backend,
    BackendConfig,
    Final,
    PromptStrategy,
    Thought,
    fixture_key,
    parse_react,
    prompt_hash,
    render_prompt,
    serialize_react,
)
from wirelessagent.errors import (
    BackendUnavailable,
    FixtureMissing,
    InvalidStrategy,
    MalformedResponse,
    MissingSlot,
    NoDirective,
    ProtocolError,
    UnknownTemplate,
)
from wirelessagent.memory import Stage, SystemMemory

REVIEW_CTX = {"query": "maximize sum rate", "plan_text": "OBJECTIVE ..."}


def test_render_is_deterministic_and_strategy_specific():
    a = render_prompt(AgentRole.PLANNING_INSTRUCTOR, PromptStrategy.COT, "plan_review", REVIEW_CTX)
    b = render_prompt(AgentRole.PLANNING_INSTRUCTOR, PromptStrategy.COT, "plan_review", REVIEW_CTX)
    assert a == b
    assert "step by step" in a
    direct = render_prompt(AgentRole.PLANNING_INSTRUCTOR, PromptStrategy.DIRECT, "plan_review", REVIEW_CTX)
    assert "step by step" not in direct and direct in a
    ps = render_prompt(AgentRole.PLANNING, PromptStrategy.PLAN_AND_SOLVE, "plan_draft",
                       {"query": "q", "digest": "d", "feedback": "f"})
    assert ps.startswith("Let's first understand the problem") and "Phase 2" in ps


def test_react_allowed_only_for_tool_roles():
    ctx = {"query": "q", "domain_tags": "t", "observations": "none"}
    text = render_prompt(AgentRole.LITERATURE, PromptStrategy.REACT, "literature_search", ctx)
    assert "ACTION: <tool name>" in text and "search" in text
    with pytest.raises(InvalidStrategy):
        render_prompt(AgentRole.PLANNING_INSTRUCTOR, PromptStrategy.REACT, "plan_review", REVIEW_CTX)


def test_missing_slot_and_unknown_template():
    with pytest.raises(MissingSlot) as exc:
        render_prompt(AgentRole.PLANNING_INSTRUCTOR, PromptStrategy.COT, "plan_review", {"query": "q"})
    assert exc.value.name == "plan_text"
    with pytest.raises(UnknownTemplate):
        render_prompt(AgentRole.CODING, PromptStrategy.COT, "nope", {})


def test_structured_context_values_render_as_sorted_json():
    ctx = {"query": "q", "plan": {"b": 1, "a": 2}, "scenario": {"M": 4}, "feedback": "none"}
    text = render_prompt(AgentRole.CODING, PromptStrategy.COT, "data_script", ctx)
    assert json.dumps({"a": 2, "b": 1}, sort_keys=True, indent=2) in text


def test_fixture_key_format():
    assert fixture_key(AgentRole.PLANNING_INSTRUCTOR, "stage2", 1) == "planning_instructor/stage2/iter1"
    assert fixture_key("Coding", "stage4", 0) == "coding/stage4/iter0"


def _scripted(tmp_path, files):
    for key, text in files.items():
        p = tmp_path / key
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    return Backend(BackendConfig(fixture_dir=tmp_path))


def test_scripted_backend_returns_fixture_and_records_exchange(tmp_path):
    backend = _scripted(tmp_path, {"coding/stage4/iter0.txt": "hello"})
    mem = SystemMemory()
    msg = AgentMessage(AgentRole.CODING, PromptStrategy.COT, "prompt")
    out = backend.complete(msg, stage="stage4", iteration=0, memory=mem, task_id="t", memory_stage=Stage.SIMULATION)
    assert out == "hello"
    rec = mem.query("t")[0]
    assert rec.kind == "agent_exchange" and rec.payload["key"] == "coding/stage4/iter0"
    with pytest.raises(FixtureMissing):
        backend.complete(msg, stage="stage4", iteration=1)


def test_scripted_prompt_drift_guard(tmp_path):
    msg = AgentMessage(AgentRole.CODING, PromptStrategy.COT, "the prompt")
    backend = _scripted(
        tmp_path,
        {"coding/stage4/iter0.txt": "ok", "coding/stage4/iter0.sha256": prompt_hash("the prompt") + "\n"},
    )
    assert backend.complete(msg, stage="stage4", iteration=0) == "ok"
    drifted = AgentMessage(AgentRole.CODING, PromptStrategy.COT, "a different prompt")
    with pytest.raises(FixtureMissing, match="drift"):
        backend.complete(drifted, stage="stage4", iteration=0)


def test_live_backend_success_and_failures(stub_server, monkeypatch):
    monkeypatch.setenv("TEST_KEY", "secret")
    backend = Backend(BackendConfig(mode="live", endpoint=stub_server.url, api_key_env="TEST_KEY", temperature=1.0))
    msg = AgentMessage(AgentRole.SCORING, PromptStrategy.DIRECT, "rate this")
    stub_server.respond(200, {"choices": [{"message": {"content": "0.8"}}]})
    assert backend.complete(msg, stage="stage4", iteration=0) == "0.8"
    _, _, body = stub_server.requests[-1]
    sent = json.loads(body)
    assert sent["temperature"] == 1.0 and sent["messages"][-1]["content"] == "rate this"

    stub_server.respond(503, {"error": "overloaded"})
    with pytest.raises(BackendUnavailable):
        backend.complete(msg, stage="stage4", iteration=0)
    stub_server.respond(200, {"unexpected": True})
    with pytest.raises(MalformedResponse):
        backend.complete(msg, stage="stage4", iteration=0)
    stub_server.respond(200, b"not json")
    with pytest.raises(MalformedResponse):
        backend.complete(msg, stage="stage4", iteration=0)


def test_live_backend_unreachable():
    backend = Backend(BackendConfig(mode="live", endpoint="http://127.0.0.1:9/none", timeout_s=2))
    with pytest.raises(BackendUnavailable):
        backend.complete(AgentMessage(AgentRole.CODING, PromptStrategy.COT, "x"), stage="stage4", iteration=0)


def test_parse_react_examples():
    text = 'THOUGHT: need papers\nACTION: search {"query": "SWIPT beamforming", "limit": 5}\nnoise line\n'
    assert parse_react(text) == [Thought("need papers"), Action("search", {"query": "SWIPT beamforming", "limit": 5})]
    assert parse_react("FINAL_ANSWER: done\nTHOUGHT: ignored") == [Final("done")]
    with pytest.raises(ProtocolError) as exc:
        parse_react('THOUGHT: x\nACTION: browse {"url": "x"}')
    assert exc.value.line_no == 2
    with pytest.raises(ProtocolError):
        parse_react("ACTION: search not-json")
    with pytest.raises(NoDirective):
        parse_react("just prose")


_line_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cc", "Cs", "Zl", "Zp"), blacklist_characters="\n\r\x85"),
    max_size=30,
).map(str.strip)
_directive = st.one_of(
    _line_text.map(Thought),
    st.dictionaries(st.text(max_size=8), st.one_of(st.integers(), st.text(max_size=10)), max_size=3).map(
        lambda d: Action("search", d)
    ),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(_directive, min_size=1, max_size=6), st.one_of(st.none(), _line_text))
def test_property_react_serialize_parse_roundtrip(directives, final):
    seq = list(directives) + ([Final(final)] if final is not None else [])
    assert parse_react(serialize_react(seq)) == seq
