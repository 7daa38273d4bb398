"""Batch evaluation over a task corpus and Table-1 style metric reports."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .agents import Backend, BackendConfig
from .errors import CorpusParseError, DuplicateTaskId, EmptyLedger, FilesystemError
from .memory import SystemMemory
from .orchestrator import OrchestratorConfig, Status, TaskOutcome, TaskSpec, run_task
from .solvers import SweepResult
from .tools import LiteratureSearch, SearchConfig
from .wireless import GainMap

logger = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parent
BUNDLED_FIXTURES = PACKAGE_ROOT / "data" / "fixtures"
BUNDLED_CORPUS = PACKAGE_ROOT / "data" / "corpus" / "sample_corpus.json"
BUNDLED_TASKS = PACKAGE_ROOT / "data" / "tasks"


@dataclass(frozen=True)
class CorpusTask:
    task_id: str
    query: str
    domain_tags: tuple[str, ...] = ()
    fixtures_ref: str | None = None
    scenario_override: Mapping[str, Any] | None = None

    def to_task_spec(self) -> TaskSpec:
        override = dict(self.scenario_override) if self.scenario_override is not None else None
        return TaskSpec(self.task_id, self.query, list(self.domain_tags), override)


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    return line, offset - (text.rfind("\n", 0, offset) + 1)


def load_corpus(path: str | Path) -> list[CorpusTask]:
    """Read a JSON array of tasks; ids must be unique."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(path, exc.lineno, exc.colno, exc.msg) from exc
    if not isinstance(doc, list):
        raise CorpusParseError(path, 1, 0, "corpus must be a JSON array")
    tasks: list[CorpusTask] = []
    seen: set[str] = set()
    decoder = json.JSONDecoder()
    # locate each element so errors can point at it
    pos = text.index("[") + 1
    for i, item in enumerate(doc):
        while text[pos] in " \t\r\n,":
            pos += 1
        _, end = decoder.raw_decode(text, pos)
        line, col = _line_col(text, pos)
        pos = end
        if not isinstance(item, dict):
            raise CorpusParseError(path, line, col, f"entry {i} is not an object")
        missing = [k for k in ("task_id", "query") if not isinstance(item.get(k), str) or not item[k].strip()]
        if missing:
            raise CorpusParseError(path, line, col, f"entry {i} lacks {', '.join(missing)}")
        tid = item["task_id"]
        if tid in seen:
            raise DuplicateTaskId(tid)
        seen.add(tid)
        tasks.append(
            CorpusTask(
                task_id=tid,
                query=item["query"],
                domain_tags=tuple(item.get("domain_tags", [])),
                fixtures_ref=item.get("fixtures_ref"),
                scenario_override=item.get("scenario_override"),
            )
        )
    return tasks


@dataclass
class RunLedgerEntry:
    task_id: str
    outcome: TaskOutcome

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "outcome": self.outcome.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RunLedgerEntry:
        return cls(d["task_id"], TaskOutcome.from_dict(d["outcome"]))


@dataclass
class RunSettings:
    """Everything a batch run shares across tasks."""

    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    fixture_root: Path = BUNDLED_FIXTURES
    out_dir: Path = Path("runs")
    persist_ledgers: bool = True


def _backend_for(task: CorpusTask, settings: RunSettings) -> Backend:
    cfg = settings.backend
    if cfg.mode == "scripted":
        ref = task.fixtures_ref or task.task_id
        cfg = BackendConfig(**{**cfg.__dict__, "fixture_dir": Path(settings.fixture_root) / ref})
    return Backend(cfg)


def run_one(task: CorpusTask, settings: RunSettings) -> tuple[TaskOutcome, SystemMemory]:
    out = Path(settings.out_dir)
    ledger = out / "ledgers" / f"{task.task_id}.jsonl" if settings.persist_ledgers else None
    if ledger is not None and ledger.exists():
        ledger.unlink()
    memory = SystemMemory(ledger)
    outcome = run_task(
        task.to_task_spec(),
        settings.orchestrator,
        _backend_for(task, settings),
        LiteratureSearch(settings.search),
        memory,
        out / "workspaces",
    )
    return outcome, memory


def run_corpus(
    tasks: Sequence[CorpusTask],
    settings: RunSettings,
    parallelism: int = 1,
    runner: Callable[[CorpusTask, RunSettings], tuple[TaskOutcome, SystemMemory]] = run_one,
) -> list[RunLedgerEntry]:
    """Run every task with its own memory and workspace; results keep input order."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise DuplicateTaskId(next(i for i in ids if ids.count(i) > 1))

    def one(task: CorpusTask) -> RunLedgerEntry:
        outcome, _ = runner(task, settings)
        logger.info("task %s: %s", task.task_id, outcome.status.value)
        return RunLedgerEntry(task.task_id, outcome)

    if parallelism == 1:
        return [one(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, tasks))


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Rate:
    numerator: int
    denominator: int

    def __post_init__(self) -> None:
        if self.denominator < 1 or not 0 <= self.numerator <= self.denominator:
            raise ValueError(f"invalid rate {self.numerator}/{self.denominator}")

    @property
    def fraction(self) -> float:
        return self.numerator / self.denominator

    def cell(self) -> str:
        return f"{100.0 * self.fraction:.2f}% ({self.numerator}/{self.denominator})"

    def to_dict(self) -> dict[str, Any]:
        return {"fraction": self.fraction, "numerator": self.numerator, "denominator": self.denominator}


TABLE_ROWS = (
    ("formulation_rate", "Problem Formulation Rate"),
    ("generation_rate", "Code Generation Rate"),
    ("execution_rate", "Code Execution Rate"),
    ("solved_rate", "Solution Solved Rate"),
    ("first_try_rate", "1st-Try Success Rate"),
)


@dataclass(frozen=True)
class CorpusMetrics:
    formulation_rate: Rate
    generation_rate: Rate
    execution_rate: Rate
    solved_rate: Rate
    first_try_rate: Rate
    avg_attempts: float

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {name: getattr(self, name).to_dict() for name, _ in TABLE_ROWS}
        d["avg_attempts"] = self.avg_attempts
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CorpusMetrics:
        rates = {name: Rate(int(d[name]["numerator"]), int(d[name]["denominator"])) for name, _ in TABLE_ROWS}
        return cls(**rates, avg_attempts=float(d["avg_attempts"]))

    def to_table(self, column: str = "Agentic AI Framework") -> str:
        rows = [(label, getattr(self, name).cell()) for name, label in TABLE_ROWS]
        rows.append(("Avg. Attempt Times", f"{self.avg_attempts:.2f}"))
        w0 = max(len("Metric"), *(len(r[0]) for r in rows))
        w1 = max(len(column), *(len(r[1]) for r in rows))
        lines = [f"{'Metric':<{w0}}  {column:>{w1}}", f"{'-' * w0}  {'-' * w1}"]
        lines += [f"{label:<{w0}}  {cell:>{w1}}" for label, cell in rows]
        return "\n".join(lines) + "\n"


def compute_metrics(ledger: Sequence[RunLedgerEntry]) -> CorpusMetrics:
    """Table-1 rates over one outcome per task."""
    if not ledger:
        raise EmptyLedger("cannot compute metrics over an empty ledger")
    n = len(ledger)
    outcomes = [e.outcome for e in ledger]

    def rate(pred: Callable[[TaskOutcome], bool]) -> Rate:
        return Rate(sum(1 for o in outcomes if pred(o)), n)

    return CorpusMetrics(
        formulation_rate=rate(lambda o: o.formulation_flag),
        generation_rate=rate(lambda o: o.generated_flag),
        execution_rate=rate(lambda o: o.executed_flag),
        solved_rate=rate(lambda o: o.status is Status.SOLVED),
        first_try_rate=rate(lambda o: o.first_try_flag),
        avg_attempts=sum(o.attempts_used for o in outcomes) / n,
    )


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def emit_report(obj: CorpusMetrics | SweepResult | GainMap, path: str | Path, fmt: str | None = None) -> list[Path]:
    """Write ``obj`` under ``path`` and return the files written.

    Metrics go to ``metrics.txt`` and ``metrics.json`` inside the directory
    ``path``; sweeps and gain maps are written as a single CSV file.
    """
    path = Path(path)
    try:
        if isinstance(obj, CorpusMetrics):
            if fmt not in (None, "table", "json"):
                raise ValueError(f"unsupported metrics format {fmt!r}")
            path.mkdir(parents=True, exist_ok=True)
            written = []
            if fmt in (None, "table"):
                (path / "metrics.txt").write_text(obj.to_table(), encoding="utf-8")
                written.append(path / "metrics.txt")
            if fmt in (None, "json"):
                (path / "metrics.json").write_text(json.dumps(obj.to_dict(), indent=2) + "\n", encoding="utf-8")
                written.append(path / "metrics.json")
            return written
        if isinstance(obj, (SweepResult, GainMap)):
            if fmt not in (None, "csv"):
                raise ValueError(f"unsupported format {fmt!r} for {type(obj).__name__}")
            path.parent.mkdir(parents=True, exist_ok=True)
            return [obj.to_csv(path)]
    except OSError as exc:
        raise FilesystemError(f"cannot write report to {path}: {exc}") from exc
    raise TypeError(f"cannot report on {type(obj).__name__}")


def write_ledger(entries: Sequence[RunLedgerEntry], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps([e.to_dict() for e in entries], indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise FilesystemError(f"cannot write {path}: {exc}") from exc
    return path
