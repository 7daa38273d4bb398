"""Append-only system memory shared by every pipeline stage.

Each record is persisted as one JSON object per line before it becomes
visible in memory, so a ledger file can always be replayed with
:func:`restore`. Payloads are stored as their JSON text; reading
``record.payload`` decodes a fresh copy, which keeps records immutable.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import jsonschema

from .errors import CorruptLedger, InvalidPayload, MissingFile, PersistenceFailure, StageOrderViolation


class Stage(str, Enum):
    QUERY = "Query"
    KNOWLEDGE = "Knowledge"
    PLAN = "Plan"
    DATA = "Data"
    SIMULATION = "Simulation"
    SCORE = "Score"
    OUTCOME = "Outcome"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]


_STAGE_ORDER = {s: i for i, s in enumerate(Stage)}
_UNORDERED = {Stage.SCORE, Stage.OUTCOME}


class AgentRole(str, Enum):
    LITERATURE = "Literature"
    PLANNING = "Planning"
    PLANNING_INSTRUCTOR = "PlanningInstructor"
    DATA_INSTRUCTOR = "DataInstructor"
    CODING = "Coding"
    CODING_INSTRUCTOR = "CodingInstructor"
    SCORING = "Scoring"


RECORD_FIELDS = ("task_id", "seq", "stage", "role", "kind", "timestamp", "payload")

# Payload keys that carry wall-clock measurements; dropped from canonical form.
VOLATILE_PAYLOAD_KEYS = frozenset({"wall_time_s"})


def _obj(required: dict[str, Any]) -> dict[str, Any]:
    return {"type": "object", "required": sorted(required), "properties": required}


_STR = {"type": "string"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_ARR = {"type": "array"}
_OBJ = {"type": "object"}
_NUM = {"type": "number"}

PAYLOAD_SCHEMAS: dict[str, dict[str, Any]] = {
    "task_query": _obj({"query": {"type": "string", "minLength": 1}, "domain_tags": _ARR}),
    "agent_exchange": _obj(
        {"role": _STR, "strategy": _STR, "key": _STR, "prompt": _STR, "response": _STR}
    ),
    "search_exchange": _obj(
        {"query": _STR, "limit": _INT, "hits": _ARR, "error": {"type": ["string", "null"]}}
    ),
    "literature_digest": _obj(
        {"terms": _ARR, "queries": _ARR, "hits": {"type": "array", "maxItems": 5}, "degraded": _BOOL}
    ),
    "plan_draft": _obj({"iteration": _INT, "text": _STR, "plan": _OBJ}),
    "plan_review": _obj(
        {
            "iteration": _INT,
            "verdict": {"enum": ["APPROVE", "REVISE"]},
            "notes": _STR,
            "protocol_warning": _BOOL,
        }
    ),
    "plan_final": _obj({"plan": _OBJ, "approved": _BOOL}),
    "data_script": _obj({"iteration": _INT, "path": _STR, "source": _STR}),
    "exec_result": _obj(
        {
            "iteration": _INT,
            "command": _ARR,
            "exit_class": {"enum": ["Success", "NonzeroExit", "Timeout", "LaunchError"]},
            "exit_code": {"type": ["integer", "null"]},
            "stdout": _STR,
            "stderr": _STR,
            "wall_time_s": _NUM,
            "artifacts": _ARR,
        }
    ),
    "data_review": _obj({"iteration": _INT, "passed": _BOOL, "checks": _ARR}),
    "dataset_manifest": _obj({"manifest": _OBJ, "path": _STR}),
    "sim_script": _obj({"attempt": _INT, "path": _STR, "source": _STR}),
    "score_report": _obj({"attempt": _INT, "report": _OBJ}),
    "stage_note": _obj({"level": {"enum": ["info", "warning", "degraded"]}, "message": _STR}),
    "task_outcome": _obj({"outcome": _OBJ}),
}


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class MemoryRecord:
    task_id: str
    seq: int
    stage: Stage
    role: AgentRole
    kind: str
    timestamp: str
    payload_json: str

    @property
    def payload(self) -> dict[str, Any]:
        return json.loads(self.payload_json)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "seq": self.seq,
            "stage": self.stage.value,
            "role": self.role.value,
            "kind": self.kind,
            "timestamp": self.timestamp,
            "payload": self.payload,
        }

    def to_line(self) -> str:
        head = json.dumps(
            {
                "task_id": self.task_id,
                "seq": self.seq,
                "stage": self.stage.value,
                "role": self.role.value,
                "kind": self.kind,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )
        # splice the stored payload text so the file carries it byte-for-byte
        return head[:-1] + ', "payload": ' + self.payload_json + "}"

    def canonical(self) -> str:
        """Deterministic form without timestamps or wall-clock payload fields."""
        payload = {k: v for k, v in self.payload.items() if k not in VOLATILE_PAYLOAD_KEYS}
        doc = {
            "task_id": self.task_id,
            "seq": self.seq,
            "stage": self.stage.value,
            "role": self.role.value,
            "kind": self.kind,
            "payload": payload,
        }
        return json.dumps(doc, sort_keys=True, ensure_ascii=False)


def validate_payload(kind: str, payload: Any) -> None:
    schema = PAYLOAD_SCHEMAS.get(kind)
    if schema is None:
        raise InvalidPayload(f"unknown record kind {kind!r}")
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        raise InvalidPayload(f"{kind}: {exc.message}") from None


class SystemMemory:
    """Ordered, append-only store of :class:`MemoryRecord` with write-through persistence.

    Appends are serialised by an instance lock; readers work on snapshots.
    """

    def __init__(self, persistence_path: str | Path | None = None) -> None:
        self.persistence_path = Path(persistence_path) if persistence_path is not None else None
        self._records: list[MemoryRecord] = []
        self._next_seq: dict[str, int] = {}
        self._max_stage: dict[str, int] = {}
        self._lock = threading.Lock()
        if self.persistence_path is not None:
            self.persistence_path.parent.mkdir(parents=True, exist_ok=True)
            self.persistence_path.touch(exist_ok=True)

    @property
    def records(self) -> tuple[MemoryRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def append(
        self,
        task_id: str,
        stage: Stage | str,
        role: AgentRole | str,
        kind: str,
        payload: dict[str, Any],
    ) -> int:
        if not task_id:
            raise ValueError("task_id must be non-empty")
        stage = Stage(stage)
        role = AgentRole(role)
        validate_payload(kind, payload)
        payload_json = json.dumps(payload, ensure_ascii=False, allow_nan=False)

        with self._lock:
            if stage not in _UNORDERED and stage.order < self._max_stage.get(task_id, -1):
                raise StageOrderViolation(
                    f"{task_id}: {stage.value} record after a later pipeline stage"
                )
            seq = self._next_seq.get(task_id, 0)
            record = MemoryRecord(task_id, seq, stage, role, kind, _utc_now(), payload_json)
            self._persist(record)
            self._admit(record)
        return seq

    def _persist(self, record: MemoryRecord) -> None:
        if self.persistence_path is None:
            return
        try:
            with self.persistence_path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_line() + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise PersistenceFailure(f"could not write {self.persistence_path}: {exc}") from exc

    def _admit(self, record: MemoryRecord) -> None:
        self._records.append(record)
        self._next_seq[record.task_id] = record.seq + 1
        if record.stage not in _UNORDERED:
            prev = self._max_stage.get(record.task_id, -1)
            self._max_stage[record.task_id] = max(prev, record.stage.order)

    def query(
        self,
        task_id: str,
        stage: Stage | str | None = None,
        kind: str | None = None,
    ) -> list[MemoryRecord]:
        stage = Stage(stage) if stage is not None else None
        out = [
            r
            for r in self.records
            if r.task_id == task_id
            and (stage is None or r.stage is stage)
            and (kind is None or r.kind == kind)
        ]
        out.sort(key=lambda r: r.seq)
        return out

    def task_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.task_id, None)
        return list(seen)

    def canonical_lines(self, task_id: str | None = None) -> list[str]:
        recs = self.records if task_id is None else self.query(task_id)
        return [r.canonical() for r in recs]

    def canonical_text(self, task_id: str | None = None) -> str:
        return "".join(line + "\n" for line in self.canonical_lines(task_id))


def _parse_line(path: Path, line_no: int, text: str) -> MemoryRecord:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptLedger(str(path), line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or set(doc) != set(RECORD_FIELDS):
        raise CorruptLedger(str(path), line_no, "record fields do not match the ledger format")
    try:
        stage = Stage(doc["stage"])
        role = AgentRole(doc["role"])
    except ValueError as exc:
        raise CorruptLedger(str(path), line_no, str(exc)) from None
    if not isinstance(doc["task_id"], str) or not doc["task_id"]:
        raise CorruptLedger(str(path), line_no, "task_id missing")
    if not isinstance(doc["seq"], int) or isinstance(doc["seq"], bool):
        raise CorruptLedger(str(path), line_no, "seq missing")
    try:
        validate_payload(doc["kind"], doc["payload"])
    except InvalidPayload as exc:
        raise CorruptLedger(str(path), line_no, str(exc)) from None
    return MemoryRecord(
        task_id=doc["task_id"],
        seq=doc["seq"],
        stage=stage,
        role=role,
        kind=doc["kind"],
        timestamp=str(doc["timestamp"]),
        payload_json=json.dumps(doc["payload"], ensure_ascii=False, allow_nan=False),
    )


def iter_ledger(path: str | Path) -> Iterable[MemoryRecord]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"ledger file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.endswith("\n"):
                # an unterminated final line is an interrupted write
                try:
                    json.loads(raw)
                except json.JSONDecodeError:
                    raise CorruptLedger(str(path), line_no, "truncated final line") from None
            yield _parse_line(path, line_no, raw.rstrip("\n"))


def restore(persistence_path: str | Path) -> SystemMemory:
    """Rebuild a :class:`SystemMemory` from its ledger file; later appends extend the file."""
    path = Path(persistence_path)
    if not path.exists():
        raise MissingFile(f"ledger file not found: {path}")
    memory = SystemMemory(path)
    line_no = 0
    for line_no, record in enumerate(iter_ledger(path), start=1):
        expected = memory._next_seq.get(record.task_id, 0)
        if record.seq != expected:
            raise CorruptLedger(
                str(path), line_no, f"seq {record.seq} for {record.task_id!r}, expected {expected}"
            )
        memory._admit(record)
    return memory
