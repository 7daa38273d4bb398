"""Agent roles, prompt rendering, LLM backends and the ReAct line protocol."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import string
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

from .errors import (
    BackendUnavailable,
    FixtureMissing,
    InvalidStrategy,
    MalformedResponse,
    MissingSlot,
    NoDirective,
    ProtocolError,
    UnknownTemplate,
)
from .memory import AgentRole, Stage, SystemMemory

__all__ = [
    "AgentRole",
    "PromptStrategy",
    "BackendConfig",
    "AgentMessage",
    "Thought",
    "Action",
    "Final",
    "Backend",
    "render_prompt",
    "register_template",
    "parse_react",
    "serialize_react",
    "fixture_key",
]

logger = logging.getLogger(__name__)


class PromptStrategy(str, Enum):
    DIRECT = "Direct"
    COT = "CoT"
    REACT = "ReAct"
    PLAN_AND_SOLVE = "PlanAndSolve"


TOOL_ROLES = frozenset({AgentRole.LITERATURE, AgentRole.CODING})

# Configuration default, overridable per run.
DEFAULT_STRATEGY: dict[AgentRole, PromptStrategy] = {
    AgentRole.LITERATURE: PromptStrategy.REACT,
    AgentRole.PLANNING: PromptStrategy.PLAN_AND_SOLVE,
    AgentRole.PLANNING_INSTRUCTOR: PromptStrategy.COT,
    AgentRole.DATA_INSTRUCTOR: PromptStrategy.COT,
    AgentRole.CODING: PromptStrategy.COT,
    AgentRole.CODING_INSTRUCTOR: PromptStrategy.COT,
    AgentRole.SCORING: PromptStrategy.DIRECT,
}

ROLE_SYSTEM_PROMPTS: dict[AgentRole, str] = {
    AgentRole.LITERATURE: "You are the Literature Agent. Ground wireless optimisation tasks in published work.",
    AgentRole.PLANNING: "You are the Planning Agent. Turn a wireless design intent into a solver-ready optimisation plan.",
    AgentRole.PLANNING_INSTRUCTOR: "You are the Planning Instructor. Review plans for missing constraints and unimplementable steps.",
    AgentRole.DATA_INSTRUCTOR: "You are the Data Instructor. Check that generated datasets match the adopted wireless model.",
    AgentRole.CODING: "You are the Coding Agent. Write executable Python simulation code.",
    AgentRole.CODING_INSTRUCTOR: "You are the Coding Instructor. Guide the Coding Agent towards a correct simulation.",
    AgentRole.SCORING: "You are the Scoring Agent. Judge whether results satisfy the task's physical constraints.",
}


# --------------------------------------------------------------------------
# prompt templates
# --------------------------------------------------------------------------

_TEMPLATES: dict[str, str] = {
    "literature_search": (
        "Task query:\n{query}\n\n"
        "Domain tags: {domain_tags}\n\n"
        "Find papers that define the system model, constraints and baselines for this task. "
        "Observations so far:\n{observations}"
    ),
    "plan_draft": (
        "Task query:\n{query}\n\n"
        "Literature digest:\n{digest}\n\n"
        "Instructor feedback on the previous draft:\n{feedback}\n\n"
        "Write the plan as fenced blocks labelled OBJECTIVE, VARIABLES, CONSTRAINTS, "
        "ALGORITHM (one step per line), BASELINES (one per line) and EVALUATION."
    ),
    "plan_review": (
        "Task query:\n{query}\n\n"
        "Draft plan:\n{plan_text}\n\n"
        "Identify missing constraints, ambiguous definitions or steps that are hard to implement. "
        "End with a line 'VERDICT: APPROVE' or 'VERDICT: REVISE' followed by your notes."
    ),
    "data_script": (
        "Task query:\n{query}\n\n"
        "Approved plan:\n{plan}\n\n"
        "Scenario parameters:\n{scenario}\n\n"
        "Data Instructor feedback:\n{feedback}\n\n"
        "Write one fenced python block that generates the channel dataset in the working "
        "directory and writes dataset_manifest.json listing every array name and shape, plus "
        "a path_loss_probe with the mean received power at two distances."
    ),
    "sim_script": (
        "Task query:\n{query}\n\n"
        "Approved plan:\n{plan}\n\n"
        "Dataset manifest:\n{manifest}\n\n"
        "Feedback from the previous attempt:\n{feedback}\n\n"
        "Write one fenced python block that runs the simulation and writes results.json with "
        "rates_bps_hz, harvested_w and total_power_w (optionally sweep and baselines)."
    ),
    "reward_model": (
        "Task query:\n{query}\n\n"
        "Simulation results:\n{results}\n\n"
        "Reply with a single number in [0, 1] rating how well the results satisfy the task "
        "requirements and physical constraints."
    ),
}

COT_BLOCK = (
    "\n\nReason step by step. Write out each intermediate step of your reasoning "
    "before stating your conclusion."
)

PS_HEADER = (
    "Let's first understand the problem and devise a plan to solve it. "
    "Then, let's carry out the plan and solve the problem step by step.\n\n"
)
PS_FOOTER = (
    "\n\nPhase 1 (plan): list the subtasks in order.\n"
    "Phase 2 (solve): execute each subtask in turn and report the result."
)

REACT_GRAMMAR = (
    "\n\nRespond using only these line formats:\n"
    "THOUGHT: <your reasoning on one line>\n"
    "ACTION: <tool name> <JSON object of arguments>\n"
    "FINAL_ANSWER: <your answer>\n"
    "Issue one or more THOUGHT/ACTION lines, wait for the observations, and finish with "
    "exactly one FINAL_ANSWER line. Available tools: {tools}."
)


def register_template(template_id: str, text: str) -> None:
    _TEMPLATES[template_id] = text


def template_slots(text: str) -> list[str]:
    slots = []
    for _, name, _, _ in string.Formatter().parse(text):
        if name is not None and name not in slots:
            slots.append(name)
    return slots


def _render_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False)


def render_prompt(
    role: AgentRole | str,
    strategy: PromptStrategy | str,
    template_id: str,
    context: Mapping[str, Any],
    tools: Sequence[str] = ("search",),
) -> str:
    role = AgentRole(role)
    strategy = PromptStrategy(strategy)
    if template_id not in _TEMPLATES:
        raise UnknownTemplate(template_id)
    if strategy is PromptStrategy.REACT and role not in TOOL_ROLES:
        raise InvalidStrategy(f"{role.value} has no tool access; ReAct is not allowed")
    text = _TEMPLATES[template_id]
    values = {}
    for name in template_slots(text):
        if name not in context:
            raise MissingSlot(name)
        values[name] = _render_value(context[name])
    body = text.format_map(values)

    if strategy is PromptStrategy.COT:
        return body + COT_BLOCK
    if strategy is PromptStrategy.PLAN_AND_SOLVE:
        return PS_HEADER + body + PS_FOOTER
    if strategy is PromptStrategy.REACT:
        return body + REACT_GRAMMAR.format(tools=", ".join(tools))
    return body


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


@dataclass
class BackendConfig:
    mode: str = "scripted"  # "scripted" | "live"
    endpoint: str | None = None
    model_name: str = "scripted"
    temperature: float = 1.0
    fixture_dir: Path | None = None
    max_react_steps: int = 8
    timeout_s: float = 60.0
    api_key_env: str = "WIRELESSAGENT_API_KEY"
    response_path: str = "choices.0.message.content"

    def __post_init__(self) -> None:
        self.mode = self.mode.lower()
        if self.mode not in ("scripted", "live"):
            raise ValueError(f"unknown backend mode {self.mode!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_react_steps < 1:
            raise ValueError("max_react_steps must be >= 1")
        if self.fixture_dir is not None:
            self.fixture_dir = Path(self.fixture_dir)
        if self.mode == "live" and not self.endpoint:
            raise ValueError("live backend requires an endpoint")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BackendConfig:
        return cls(**dict(data))


@dataclass
class AgentMessage:
    role: AgentRole
    strategy: PromptStrategy
    content: str
    context_refs: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.role = AgentRole(self.role)
        self.strategy = PromptStrategy(self.strategy)
        if not self.content:
            raise ValueError("message content must be non-empty")


PROMPT_HASH_PREFIX_CHARS = 512


def prompt_hash(content: str) -> str:
    """Short digest of the prompt prefix used to guard scripted fixtures against drift."""
    return hashlib.sha256(content[:PROMPT_HASH_PREFIX_CHARS].encode("utf-8")).hexdigest()[:16]


def role_slug(role: AgentRole) -> str:
    out = []
    for i, ch in enumerate(role.value):
        if ch.isupper() and i:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def fixture_key(role: AgentRole | str, stage: str, iteration: int) -> str:
    return f"{role_slug(AgentRole(role))}/{stage}/iter{iteration}"


def extract_path(doc: Any, path: str) -> Any:
    cur = doc
    for part in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur[part]
    return cur


class Backend:
    """Dispatches agent messages to scripted fixtures or a live chat endpoint.

    Every completed call is recorded in ``memory`` (when given) as an
    ``agent_exchange`` record.
    """

    def __init__(self, config: BackendConfig) -> None:
        self.config = config

    def complete(
        self,
        message: AgentMessage,
        *,
        stage: str,
        iteration: int,
        memory: SystemMemory | None = None,
        task_id: str | None = None,
        memory_stage: Stage | str | None = None,
    ) -> str:
        key = fixture_key(message.role, stage, iteration)
        if self.config.mode == "scripted":
            text = self._scripted(key, message)
        else:
            text = self._live(message)
        if memory is not None and task_id is not None:
            memory.append(
                task_id,
                memory_stage or Stage.KNOWLEDGE,
                message.role,
                "agent_exchange",
                {
                    "role": message.role.value,
                    "strategy": message.strategy.value,
                    "key": key,
                    "prompt": message.content,
                    "response": text,
                },
            )
        return text

    def _scripted(self, key: str, message: AgentMessage) -> str:
        if self.config.fixture_dir is None:
            raise FixtureMissing(key, "no fixture_dir configured")
        path = self.config.fixture_dir / f"{key}.txt"
        if not path.is_file():
            raise FixtureMissing(key)
        guard = self.config.fixture_dir / f"{key}.sha256"
        if guard.is_file():
            expected = guard.read_text(encoding="utf-8").strip()
            actual = prompt_hash(message.content)
            if expected != actual:
                raise FixtureMissing(key, f"prompt drift (expected {expected}, got {actual})")
        return path.read_text(encoding="utf-8")

    def _live(self, message: AgentMessage) -> str:
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "messages": [
                {"role": "system", "content": ROLE_SYSTEM_PROMPTS[message.role]},
                {"role": "user", "content": message.content},
            ],
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        req = urllib.request.Request(
            cfg.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=cfg.timeout_s) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise BackendUnavailable(f"HTTP {exc.code} from {cfg.endpoint}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise BackendUnavailable(f"cannot reach {cfg.endpoint}: {exc}") from exc
        try:
            text = extract_path(json.loads(raw), cfg.response_path)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"no text at {cfg.response_path!r}") from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"non-text value at {cfg.response_path!r}")
        return text


# --------------------------------------------------------------------------
# ReAct line protocol
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Thought:
    text: str


@dataclass(frozen=True)
class Action:
    tool_name: str
    args: dict[str, Any]


@dataclass(frozen=True)
class Final:
    text: str


ReactDirective = Union[Thought, Action, Final]

DEFAULT_TOOLS = ("search",)


def parse_react(text: str, tools: Iterable[str] = DEFAULT_TOOLS) -> list[ReactDirective]:
    """Parse THOUGHT / ACTION / FINAL_ANSWER lines; other lines are ignored.

    Parsing stops at the first FINAL_ANSWER.
    """
    registered = set(tools)
    out: list[ReactDirective] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("THOUGHT:"):
            out.append(Thought(line[len("THOUGHT:") :].strip()))
        elif line.startswith("ACTION:"):
            rest = line[len("ACTION:") :].strip()
            name, _, arg_text = rest.partition(" ")
            if not name:
                raise ProtocolError(line_no, "ACTION without a tool name")
            if name not in registered:
                raise ProtocolError(line_no, f"unregistered tool {name!r}")
            try:
                args = json.loads(arg_text) if arg_text.strip() else None
            except json.JSONDecodeError:
                args = None
            if not isinstance(args, dict):
                raise ProtocolError(line_no, "ACTION arguments must be a JSON object")
            out.append(Action(name, args))
        elif line.startswith("FINAL_ANSWER:"):
            out.append(Final(line[len("FINAL_ANSWER:") :].strip()))
            break
    if not out:
        raise NoDirective("no THOUGHT, ACTION or FINAL_ANSWER line found")
    return out


def serialize_react(directives: Sequence[ReactDirective]) -> str:
    lines = []
    for d in directives:
        if isinstance(d, Thought):
            lines.append(f"THOUGHT: {d.text}")
        elif isinstance(d, Action):
            lines.append(f"ACTION: {d.tool_name} {json.dumps(d.args, sort_keys=True)}")
        else:
            lines.append(f"FINAL_ANSWER: {d.text}")
    return "\n".join(lines)
