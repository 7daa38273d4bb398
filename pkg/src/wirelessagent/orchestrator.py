"""The four-stage task loop: knowledge, plan, data, simulation.

Each task runs Perception (literature grounding), Planning (drafts
reviewed by an instructor), Action (data preparation and simulation in a
sandbox) and Reflection (scored feedback routed to the coding agent) in
strict sequence. Every exchange and artifact is appended to the task's
:class:`~wirelessagent.memory.SystemMemory`; the final outcome flags are
derived from that ledger rather than from agent claims.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import tools
from .agents import (
    Action,
    AgentMessage,
    AgentRole,
    Backend,
    Final,
    PromptStrategy,
    DEFAULT_STRATEGY,
    parse_react,
    render_prompt,
)
from .errors import (
    AdapterUnavailable,
    BackendUnavailable,
    FixtureMissing,
    MalformedResponse,
    NoDirective,
    ProtocolError,
    SearchUnavailable,
    WirelessAgentError,
)
from .memory import Stage, SystemMemory
from .tools import ExecutionResult, ExitClass, LiteratureSearch, PaperHit, Workspace
from .validation import (
    RESULTS_FILE,
    Branch,
    CheckResult,
    ScoreReport,
    aggregate_score,
    combine_scores,
    error_report,
    reward_adapter,
    score_results_text,
)
from .wireless import ScenarioConfig

logger = logging.getLogger(__name__)

STAGE_KEYS = {
    Stage.KNOWLEDGE: "stage1",
    Stage.PLAN: "stage2",
    Stage.DATA: "stage3",
    Stage.SIMULATION: "stage4",
}

MANIFEST_FILE = "dataset_manifest.json"
SCENARIO_FILE = "scenario.json"
WORKSPACE_TOKEN = "<workspace>"


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass
class TaskSpec:
    task_id: str
    query: str
    domain_tags: list[str] = field(default_factory=list)
    scenario_override: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if not self.query or not self.query.strip():
            raise ValueError("task query must be non-empty")

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig.from_dict(self.scenario_override or {})

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "task_id": self.task_id,
            "query": self.query,
            "domain_tags": list(self.domain_tags),
        }
        if self.scenario_override is not None:
            d["scenario_override"] = dict(self.scenario_override)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TaskSpec:
        return cls(
            task_id=str(d["task_id"]),
            query=str(d["query"]),
            domain_tags=list(d.get("domain_tags", [])),
            scenario_override=d.get("scenario_override"),
        )


def load_task(path: str | Path) -> TaskSpec:
    return TaskSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


PLAN_BLOCKS = ("OBJECTIVE", "VARIABLES", "CONSTRAINTS", "ALGORITHM", "BASELINES", "EVALUATION")


@dataclass
class PlanDocument:
    objective: str = ""
    variables: str = ""
    constraints: str = ""
    algorithm_steps: list[str] = field(default_factory=list)
    baselines: list[str] = field(default_factory=list)
    evaluation_protocol: str = ""
    scenario: dict[str, Any] | None = None

    @property
    def formulation_complete(self) -> bool:
        return bool(self.objective.strip() and self.variables.strip() and self.constraints.strip())

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "variables": self.variables,
            "constraints": self.constraints,
            "algorithm_steps": list(self.algorithm_steps),
            "baselines": list(self.baselines),
            "evaluation_protocol": self.evaluation_protocol,
            "scenario": self.scenario,
            "formulation_complete": self.formulation_complete,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PlanDocument:
        return cls(
            objective=d.get("objective", ""),
            variables=d.get("variables", ""),
            constraints=d.get("constraints", ""),
            algorithm_steps=list(d.get("algorithm_steps", [])),
            baselines=list(d.get("baselines", [])),
            evaluation_protocol=d.get("evaluation_protocol", ""),
            scenario=d.get("scenario"),
        )


_FENCE = re.compile(r"^```[ \t]*([A-Za-z_][\w-]*)?[ \t]*\n(.*?)^```[ \t]*$", re.M | re.S)
_STEP_PREFIX = re.compile(r"^\s*(?:\d+[.)]|[-*])\s*")


def _fenced_blocks(text: str) -> list[tuple[str, str]]:
    return [((m.group(1) or ""), m.group(2)) for m in _FENCE.finditer(text)]


def _lines(block: str) -> list[str]:
    out = []
    for line in block.splitlines():
        line = _STEP_PREFIX.sub("", line).strip()
        if line:
            out.append(line)
    return out


def parse_plan(text: str) -> PlanDocument:
    """Build a plan from fenced blocks labelled OBJECTIVE ... EVALUATION (and optional SCENARIO)."""
    blocks: dict[str, str] = {}
    for label, body in _fenced_blocks(text):
        label = label.upper()
        if (label in PLAN_BLOCKS or label == "SCENARIO") and label not in blocks:
            blocks[label] = body.strip()
    scenario = None
    if blocks.get("SCENARIO"):
        try:
            scenario = json.loads(blocks["SCENARIO"])
        except json.JSONDecodeError:
            scenario = None
    return PlanDocument(
        objective=blocks.get("OBJECTIVE", ""),
        variables=blocks.get("VARIABLES", ""),
        constraints=blocks.get("CONSTRAINTS", ""),
        algorithm_steps=_lines(blocks.get("ALGORITHM", "")),
        baselines=_lines(blocks.get("BASELINES", "")),
        evaluation_protocol=blocks.get("EVALUATION", ""),
        scenario=scenario if isinstance(scenario, dict) else None,
    )


class Verdict(str, Enum):
    APPROVE = "APPROVE"
    REVISE = "REVISE"


_VERDICT = re.compile(r"^\s*VERDICT:\s*(APPROVE|REVISE)\b(.*)$", re.M)


def parse_verdict(text: str) -> tuple[Verdict, str, bool]:
    """Return ``(verdict, notes, protocol_warning)``; a missing marker means REVISE."""
    m = _VERDICT.search(text)
    if m is None:
        return Verdict.REVISE, text.strip(), True
    notes = (m.group(2) + "\n" + text[m.end() :]).strip()
    if not notes:
        notes = text[: m.start()].strip()
    return Verdict(m.group(1)), notes, False


def extract_code(text: str) -> str | None:
    blocks = _fenced_blocks(text)
    for label, body in blocks:
        if label.lower() in ("python", "py"):
            return body
    return blocks[0][1] if blocks else None


@dataclass
class OrchestratorConfig:
    max_attempts: int = 3
    max_plan_reviews: int = 3
    max_data_reviews: int = 3
    # solved already requires every mandatory check; 0.0 adds no further cutoff
    solve_score_threshold: float = 0.0
    sandbox_timeout_s: float = tools.DEFAULT_TIMEOUT_S
    use_reward_model: bool = False
    direct_search: bool = False
    search_limit: int = 10
    digest_size: int = 5
    strategies: dict[AgentRole, PromptStrategy] = field(default_factory=lambda: dict(DEFAULT_STRATEGY))

    def __post_init__(self) -> None:
        for name in ("max_attempts", "max_plan_reviews", "max_data_reviews"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.solve_score_threshold <= 1.0:
            raise ValueError("solve_score_threshold must lie in [0, 1]")
        self.strategies = {AgentRole(k): PromptStrategy(v) for k, v in self.strategies.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> OrchestratorConfig:
        return cls(**dict(d))


class Status(str, Enum):
    SOLVED = "Solved"
    EXHAUSTED = "Exhausted"
    ABORTED = "Aborted"


@dataclass
class TaskOutcome:
    status: Status
    attempts_used: int
    final_score: float | None
    formulation_flag: bool
    executed_flag: bool
    generated_flag: bool
    first_try_flag: bool
    aborted_stage: str | None = None
    reason: str | None = None

    def __post_init__(self) -> None:
        self.status = Status(self.status)
        if self.status is Status.SOLVED and self.final_score is None:
            raise ValueError("a solved outcome needs a final score")
        if self.first_try_flag and (self.attempts_used != 1 or self.status is not Status.SOLVED):
            raise ValueError("first_try_flag requires a solve on attempt 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "attempts_used": self.attempts_used,
            "final_score": self.final_score,
            "formulation_flag": self.formulation_flag,
            "executed_flag": self.executed_flag,
            "generated_flag": self.generated_flag,
            "first_try_flag": self.first_try_flag,
            "aborted_stage": self.aborted_stage,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TaskOutcome:
        return cls(
            status=Status(d["status"]),
            attempts_used=int(d["attempts_used"]),
            final_score=d.get("final_score"),
            formulation_flag=bool(d["formulation_flag"]),
            executed_flag=bool(d["executed_flag"]),
            generated_flag=bool(d["generated_flag"]),
            first_try_flag=bool(d["first_try_flag"]),
            aborted_stage=d.get("aborted_stage"),
            reason=d.get("reason"),
        )


def classify_feedback(exec_result: ExecutionResult, score: ScoreReport | None) -> Branch:
    """Route a finished attempt: clean runs are judged for validity, everything else is an error."""
    if exec_result.ok != (score is not None):
        raise ValueError("a score report is expected exactly when execution succeeded")
    return Branch.WIRELESS_VALIDITY if exec_result.ok else Branch.ERROR_HANDLING


class TaskAborted(WirelessAgentError):
    def __init__(self, stage: Stage, reason: str) -> None:
        super().__init__(f"{stage.value}: {reason}")
        self.stage = stage
        self.reason = reason


# --------------------------------------------------------------------------
# outcome flags from the ledger
# --------------------------------------------------------------------------


def ledger_flags(memory: SystemMemory, task_id: str) -> dict[str, bool]:
    records = memory.query(task_id)
    first_sim = next((r.seq for r in records if r.stage is Stage.SIMULATION), None)
    formulation = any(
        r.kind in ("plan_draft", "plan_final")
        and r.payload["plan"].get("formulation_complete")
        and (first_sim is None or r.seq < first_sim)
        for r in records
    )
    generated = any(r.kind == "sim_script" for r in records)
    executed = any(
        r.kind == "exec_result" and r.stage is Stage.SIMULATION and r.payload["exit_class"] == "Success"
        for r in records
    )
    return {"formulation": formulation, "generated": generated, "executed": executed}


# --------------------------------------------------------------------------
# the task runner
# --------------------------------------------------------------------------


@dataclass
class StageIVResult:
    attempts_used: int
    report: ScoreReport | None
    solved: bool


class TaskRunner:
    """Runs one task through all four stages against one memory and workspace."""

    def __init__(
        self,
        task: TaskSpec,
        config: OrchestratorConfig,
        backend: Backend,
        search: LiteratureSearch,
        memory: SystemMemory,
        workspace: Workspace,
    ) -> None:
        self.task = task
        self.config = config
        self.backend = backend
        self.search = search
        self.memory = memory
        self.ws = workspace
        self.scenario = task.scenario()

    # -- plumbing ---------------------------------------------------------

    def record(self, stage: Stage, role: AgentRole, kind: str, payload: dict[str, Any]) -> int:
        return self.memory.append(self.task.task_id, stage, role, kind, payload)

    def note(self, stage: Stage, level: str, message: str) -> None:
        role = {
            Stage.KNOWLEDGE: AgentRole.LITERATURE,
            Stage.PLAN: AgentRole.PLANNING_INSTRUCTOR,
            Stage.DATA: AgentRole.DATA_INSTRUCTOR,
        }.get(stage, AgentRole.SCORING)
        self.record(stage, role, "stage_note", {"level": level, "message": message})

    def _scrub(self, text: str) -> str:
        return text.replace(str(self.ws.root), WORKSPACE_TOKEN)

    def ask(
        self,
        role: AgentRole,
        template_id: str,
        context: Mapping[str, Any],
        stage: Stage,
        iteration: int,
        strategy: PromptStrategy | None = None,
    ) -> str:
        strategy = strategy or self.config.strategies[role]
        prompt = render_prompt(role, strategy, template_id, context)
        message = AgentMessage(role, strategy, prompt)
        for attempt in range(2):
            try:
                return self.backend.complete(
                    message,
                    stage=STAGE_KEYS[stage],
                    iteration=iteration,
                    memory=self.memory,
                    task_id=self.task.task_id,
                    memory_stage=stage,
                )
            except BackendUnavailable as exc:
                if attempt == 0:
                    self.note(stage, "warning", f"backend unavailable, retrying: {exc}")
                    continue
                raise TaskAborted(stage, f"backend unavailable after retry: {exc}") from exc
            except (FixtureMissing, MalformedResponse) as exc:
                raise TaskAborted(stage, str(exc)) from exc
        raise AssertionError("unreachable")

    def record_exec(self, stage: Stage, iteration: int, command: list[str], result: ExecutionResult) -> None:
        self.record(
            stage,
            AgentRole.CODING,
            "exec_result",
            {
                "iteration": iteration,
                "command": [Path(command[0]).name, *command[1:]],
                "exit_class": result.exit_class.value,
                "exit_code": result.exit_code,
                "stdout": self._scrub(result.stdout),
                "stderr": self._scrub(result.stderr),
                "wall_time_s": round(result.wall_time, 6),
                "artifacts": list(result.artifacts),
            },
        )

    # -- stage I ----------------------------------------------------------

    def _search(self, query: str, limit: int) -> tuple[list[PaperHit], str | None]:
        error = None
        hits: list[PaperHit] = []
        for _ in range(2):
            try:
                hits = self.search.search(query, limit)
                error = None
                break
            except SearchUnavailable as exc:
                error = str(exc)
        self.record(
            Stage.KNOWLEDGE,
            AgentRole.LITERATURE,
            "search_exchange",
            {
                "query": query,
                "limit": limit,
                "hits": [h.to_dict() for h in hits],
                "error": error,
            },
        )
        return hits, error

    def stage_knowledge(self) -> dict[str, Any]:
        task = self.task
        terms = tools.extract_terms(task.query + " " + " ".join(task.domain_tags))
        queries: list[str] = []
        gathered: list[PaperHit] = []
        degraded = False

        def run_search(query: str, limit: int) -> str:
            nonlocal degraded
            queries.append(query)
            hits, error = self._search(query, limit)
            gathered.extend(hits)
            if error:
                degraded = True
                return f"search {query!r} failed: {error}"
            titles = "; ".join(f"{h.title} ({h.year})" for h in hits) or "no results"
            return f"search {query!r} returned {len(hits)} hits: {titles}"

        if not self.config.direct_search:
            observations: list[str] = []
            for step in range(self.backend.config.max_react_steps):
                reply = self.ask(
                    AgentRole.LITERATURE,
                    "literature_search",
                    {
                        "query": task.query,
                        "domain_tags": ", ".join(task.domain_tags) or "none",
                        "observations": "\n".join(observations) or "none yet",
                    },
                    Stage.KNOWLEDGE,
                    step,
                )
                try:
                    directives = parse_react(reply)
                except (ProtocolError, NoDirective) as exc:
                    self.note(Stage.KNOWLEDGE, "warning", f"ReAct protocol error: {exc}")
                    observations.append(f"protocol error: {exc}")
                    continue
                for d in directives:
                    if isinstance(d, Action):
                        q = d.args.get("query")
                        limit = d.args.get("limit", self.config.search_limit)
                        if not isinstance(q, str) or not q.strip() or not isinstance(limit, int) or limit < 1:
                            observations.append(f"invalid search arguments: {json.dumps(d.args, sort_keys=True)}")
                            continue
                        observations.append(run_search(q, limit))
                if any(isinstance(d, Final) for d in directives):
                    break
            else:
                self.note(Stage.KNOWLEDGE, "warning", "ReAct step cap reached without FINAL_ANSWER")
        if not queries:
            run_search(task.query, self.config.search_limit)

        unique: dict[str, PaperHit] = {}
        for h in gathered:
            unique.setdefault(h.source_id or h.title, h)
        ranked = tools.rank_papers(list(unique.values()), terms) if terms and unique else []
        top = [r for r in ranked if r.score > 0][: self.config.digest_size]
        digest = {
            "terms": terms,
            "queries": queries,
            "hits": [r.to_dict() for r in top],
            "degraded": degraded,
        }
        if degraded:
            self.note(Stage.KNOWLEDGE, "degraded", "literature search unavailable; digest may be incomplete")
        self.record(Stage.KNOWLEDGE, AgentRole.LITERATURE, "literature_digest", digest)
        return digest

    # -- stage II ---------------------------------------------------------

    def stage_plan(self, digest: Mapping[str, Any]) -> PlanDocument:
        digest_text = "\n".join(
            f"- {h['title']} ({h['year']}, {h['venue']}), relevance {h['score']:.2f}: {h['abstract']}"
            for h in digest["hits"]
        ) or "no relevant literature found"
        feedback = "none (first draft)"
        plan = PlanDocument()
        approved = False
        for i in range(self.config.max_plan_reviews):
            draft = self.ask(
                AgentRole.PLANNING,
                "plan_draft",
                {"query": self.task.query, "digest": digest_text, "feedback": feedback},
                Stage.PLAN,
                i,
            )
            plan = parse_plan(draft)
            self.record(Stage.PLAN, AgentRole.PLANNING, "plan_draft", {"iteration": i, "text": draft, "plan": plan.to_dict()})
            review = self.ask(
                AgentRole.PLANNING_INSTRUCTOR,
                "plan_review",
                {"query": self.task.query, "plan_text": draft},
                Stage.PLAN,
                i,
            )
            verdict, notes, warning = parse_verdict(review)
            if verdict is Verdict.APPROVE and not plan.algorithm_steps:
                verdict, notes = Verdict.REVISE, "approval withheld: ALGORITHM block is empty. " + notes
            self.record(
                Stage.PLAN,
                AgentRole.PLANNING_INSTRUCTOR,
                "plan_review",
                {"iteration": i, "verdict": verdict.value, "notes": notes, "protocol_warning": warning},
            )
            if warning:
                self.note(Stage.PLAN, "warning", f"review {i} lacks a VERDICT marker; treated as REVISE")
            if verdict is Verdict.APPROVE:
                approved = True
                break
            feedback = notes or "revise the plan"
        if not approved:
            self.note(
                Stage.PLAN,
                "degraded",
                f"PlanRejected: no approval after {self.config.max_plan_reviews} reviews; continuing with last draft",
            )
        self.record(Stage.PLAN, AgentRole.PLANNING_INSTRUCTOR, "plan_final", {"plan": plan.to_dict(), "approved": approved})
        if plan.scenario:
            try:
                self.scenario = self.scenario.with_overrides(**plan.scenario)
            except (TypeError, ValueError) as exc:
                self.note(Stage.PLAN, "warning", f"ignoring invalid SCENARIO block: {exc}")
        return plan

    # -- stage III --------------------------------------------------------

    def data_checks(self, result: ExecutionResult) -> tuple[list[CheckResult], dict[str, Any] | None]:
        checks = [
            CheckResult(
                "execution",
                True,
                result.ok,
                "script ran cleanly" if result.ok else self._scrub(result.error_text()),
            )
        ]
        path = self.ws.root / MANIFEST_FILE
        manifest = None
        if path.is_file():
            try:
                manifest = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                checks.append(CheckResult("manifest", True, False, f"{MANIFEST_FILE} is not valid JSON: {exc.msg}"))
        else:
            checks.append(CheckResult("manifest", True, False, f"{MANIFEST_FILE} was not written"))
        if manifest is not None:
            if not isinstance(manifest, dict) or not isinstance(manifest.get("arrays"), list):
                checks.append(CheckResult("manifest", True, False, "manifest must contain an 'arrays' list"))
                manifest = None
            else:
                checks.append(CheckResult("manifest", True, True, f"{len(manifest['arrays'])} arrays listed"))
        if manifest is None:
            return checks, None

        checks.append(self._dimension_check(manifest))
        checks.append(self._path_loss_check(manifest))
        return checks, manifest

    def _dimension_check(self, manifest: Mapping[str, Any]) -> CheckResult:
        cfg = self.scenario
        expected = {f"H_{k}": [cfg.N_r, cfg.M] for k in range(cfg.K)}
        expected.update({f"G_{j}": [cfg.N_e, cfg.M] for j in range(cfg.J)})
        listed: dict[str, list[int]] = {}
        for entry in manifest["arrays"]:
            if isinstance(entry, Mapping) and isinstance(entry.get("name"), str):
                listed[entry["name"]] = [int(x) for x in entry.get("shape", [])]
        problems = []
        for name, shape in expected.items():
            if name not in listed:
                problems.append(f"{name} missing")
            elif listed[name] != shape:
                problems.append(f"{name} has shape {tuple(listed[name])}, expected {tuple(shape)}")
        extra = sorted(n for n in listed if re.fullmatch(r"[HG]_\d+", n) and n not in expected)
        if extra:
            problems.append(f"unexpected arrays {extra} (K={cfg.K}, J={cfg.J})")
        dataset = manifest.get("dataset")
        if not problems and isinstance(dataset, str) and dataset.endswith(".npz"):
            file = self.ws.root / dataset
            if not file.is_file():
                problems.append(f"dataset file {dataset} not found")
            else:
                with np.load(file) as data:
                    for name, shape in expected.items():
                        if name not in data.files:
                            problems.append(f"{name} absent from {dataset}")
                        elif list(data[name].shape) != shape:
                            problems.append(f"{name} stored with shape {data[name].shape}")
                        elif not np.all(np.isfinite(data[name])):
                            problems.append(f"{name} contains non-finite entries")
        if problems:
            return CheckResult("dimensions", True, False, "; ".join(problems))
        return CheckResult("dimensions", True, True, f"K={cfg.K} H ({cfg.N_r}x{cfg.M}), J={cfg.J} G ({cfg.N_e}x{cfg.M})")

    @staticmethod
    def _path_loss_check(manifest: Mapping[str, Any]) -> CheckResult:
        probe = manifest.get("path_loss_probe")
        try:
            pts = sorted((float(p["distance_m"]), float(p["mean_rx_power_db"])) for p in probe)
        except (TypeError, KeyError, ValueError):
            return CheckResult("path_loss_trend", True, False, "path_loss_probe needs distance_m and mean_rx_power_db entries")
        if len(pts) < 2 or len({d for d, _ in pts}) < 2:
            return CheckResult("path_loss_trend", True, False, "path_loss_probe needs two distinct distances")
        (d0, p0), (d1, p1) = pts[0], pts[-1]
        if p1 < p0:
            return CheckResult("path_loss_trend", True, True, f"{p0:.2f} dB at {d0} m > {p1:.2f} dB at {d1} m", p0 - p1)
        return CheckResult(
            "path_loss_trend", True, False, f"received power does not fall with distance ({p0:.2f} dB at {d0} m, {p1:.2f} dB at {d1} m)"
        )

    def stage_data(self, plan: PlanDocument) -> dict[str, Any]:
        (self.ws.root / SCENARIO_FILE).write_text(json.dumps(self.scenario.to_dict(), indent=2), encoding="utf-8")
        feedback = "none (first attempt)"
        for i in range(self.config.max_data_reviews):
            reply = self.ask(
                AgentRole.CODING,
                "data_script",
                {
                    "query": self.task.query,
                    "plan": plan.to_dict(),
                    "scenario": self.scenario.to_dict(),
                    "feedback": feedback,
                },
                Stage.DATA,
                i,
            )
            code = extract_code(reply)
            if code is None:
                checks = [CheckResult("execution", True, False, "response contained no fenced python block")]
                manifest = None
            else:
                script = f"data_prep_{i}.py"
                (self.ws.root / script).write_text(code, encoding="utf-8")
                self.record(Stage.DATA, AgentRole.CODING, "data_script", {"iteration": i, "path": script, "source": code})
                (self.ws.root / MANIFEST_FILE).unlink(missing_ok=True)
                command = tools.python_command(script)
                result = tools.execute_sandbox(self.ws, command, self.config.sandbox_timeout_s)
                self.record_exec(Stage.DATA, i, command, result)
                checks, manifest = self.data_checks(result)
            passed = all(c.passed for c in checks)
            self.record(
                Stage.DATA,
                AgentRole.DATA_INSTRUCTOR,
                "data_review",
                {"iteration": i, "passed": passed, "checks": [c.to_dict() for c in checks]},
            )
            if passed and manifest is not None:
                self.record(Stage.DATA, AgentRole.DATA_INSTRUCTOR, "dataset_manifest", {"manifest": manifest, "path": MANIFEST_FILE})
                return manifest
            feedback = "\n".join(f"[FAIL] {c.check_id}: {c.detail}" for c in checks if not c.passed)
        raise TaskAborted(Stage.DATA, f"DataPrepFailed after {self.config.max_data_reviews} reviews")

    # -- stage IV ---------------------------------------------------------

    def _score_success(self, attempt: int) -> ScoreReport:
        path = self.ws.root / RESULTS_FILE
        if not path.is_file():
            check = CheckResult("results_parse", True, False, f"{RESULTS_FILE} was not written")
            return aggregate_score([check])
        text = path.read_text(encoding="utf-8")
        report = score_results_text(text, self.scenario)
        if self.config.use_reward_model:
            try:
                adapter = reward_adapter(
                    json.loads(text),
                    self.task.query,
                    self.backend,
                    iteration=attempt,
                    memory=self.memory,
                    task_id=self.task.task_id,
                )
                report.score = combine_scores(report.score, adapter)
                report.notes.append(f"reward model score {adapter:.3f}")
            except (AdapterUnavailable, json.JSONDecodeError) as exc:
                report.notes.append(f"reward model unavailable, rule-based score kept: {exc}")
        return report

    def stage_sim(self, plan: PlanDocument, manifest: Mapping[str, Any]) -> StageIVResult:
        feedback = "none (first attempt)"
        report: ScoreReport | None = None
        for a in range(self.config.max_attempts):
            reply = self.ask(
                AgentRole.CODING,
                "sim_script",
                {"query": self.task.query, "plan": plan.to_dict(), "manifest": manifest, "feedback": feedback},
                Stage.SIMULATION,
                a,
            )
            code = extract_code(reply)
            if code is None:
                command = ["<none>"]
                result = ExecutionResult(ExitClass.LAUNCH_ERROR, None, "", "response contained no fenced python block", 0.0, [])
            else:
                script = f"sim_attempt_{a}.py"
                (self.ws.root / script).write_text(code, encoding="utf-8")
                self.record(Stage.SIMULATION, AgentRole.CODING, "sim_script", {"attempt": a, "path": script, "source": code})
                (self.ws.root / RESULTS_FILE).unlink(missing_ok=True)
                command = tools.python_command(script)
                result = tools.execute_sandbox(self.ws, command, self.config.sandbox_timeout_s)
            self.record_exec(Stage.SIMULATION, a, command, result)

            score = self._score_success(a) if result.ok else None
            branch = classify_feedback(result, score)
            report = score if score is not None else error_report(self._scrub(result.error_text()))
            self.record(Stage.SCORE, AgentRole.SCORING, "score_report", {"attempt": a, "report": report.to_dict()})
            if (
                branch is Branch.WIRELESS_VALIDITY
                and report.solved
                and report.score >= self.config.solve_score_threshold
            ):
                return StageIVResult(a + 1, report, True)
            if branch is Branch.ERROR_HANDLING:
                feedback = "The previous script failed to run. Diagnose the root cause and fix it.\n" + report.to_text()
            else:
                feedback = "The previous results violate task requirements. Revise the implementation.\n" + report.to_text()
        return StageIVResult(self.config.max_attempts, report, False)

    # -- whole task -------------------------------------------------------

    def run(self) -> TaskOutcome:
        task = self.task
        self.record(Stage.QUERY, AgentRole.LITERATURE, "task_query", {"query": task.query, "domain_tags": list(task.domain_tags)})
        attempts = 0
        sim: StageIVResult | None = None
        aborted: TaskAborted | None = None
        try:
            digest = self.stage_knowledge()
            plan = self.stage_plan(digest)
            manifest = self.stage_data(plan)
            sim = self.stage_sim(plan, manifest)
            attempts = sim.attempts_used
        except TaskAborted as exc:
            aborted = exc
            attempts = len(self.memory.query(task.task_id, stage=Stage.SCORE, kind="score_report"))
            self.note(Stage.OUTCOME, "degraded", f"aborted in {exc.stage.value}: {exc.reason}")

        flags = ledger_flags(self.memory, task.task_id)
        if aborted is not None:
            status = Status.ABORTED
        elif sim is not None and sim.solved:
            status = Status.SOLVED
        else:
            status = Status.EXHAUSTED
        final_score = sim.report.score if sim is not None and sim.report is not None else None
        outcome = TaskOutcome(
            status=status,
            attempts_used=attempts,
            final_score=final_score,
            formulation_flag=flags["formulation"],
            executed_flag=flags["executed"],
            generated_flag=flags["generated"],
            first_try_flag=status is Status.SOLVED and attempts == 1,
            aborted_stage=aborted.stage.value if aborted else None,
            reason=aborted.reason if aborted else None,
        )
        self.record(Stage.OUTCOME, AgentRole.SCORING, "task_outcome", {"outcome": outcome.to_dict()})
        return outcome


def run_task(
    task: TaskSpec,
    config: OrchestratorConfig,
    backend: Backend,
    search: LiteratureSearch,
    memory: SystemMemory,
    workspace_base: str | Path,
) -> TaskOutcome:
    """Execute one task end to end; ``memory`` must not yet hold records for it."""
    if memory.query(task.task_id):
        raise ValueError(f"memory already holds records for task {task.task_id!r}")
    ws = tools.init_workspace(task.task_id, workspace_base)
    return TaskRunner(task, config, backend, search, memory, ws).run()
