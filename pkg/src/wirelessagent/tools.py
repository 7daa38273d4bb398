"""External-world actions: literature search, ranking, workspaces, sandboxed execution."""

from __future__ import annotations

import json
import os
import re
import signal
import subprocess
import sys
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import EmptyQuery, FilesystemError, SearchUnavailable

PACKAGE_ROOT = Path(__file__).resolve().parent
BUNDLED_LITERATURE = PACKAGE_ROOT / "data" / "literature"

STOPWORDS = frozenset(
    """a an and are as at be between by can each for from has have how in into is it its
    multiple of on one or our such that the their then these this to under use using we
    what when where which while with your you all any both given task consider suppose
    assume assuming equipped subject guaranteeing optimize maximize minimize simultaneously""".split()
)

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def extract_terms(text: str, max_terms: int | None = None) -> list[str]:
    """Distinct non-stopword tokens of ``text`` in first-seen order."""
    seen: dict[str, None] = {}
    for tok in tokenize(text):
        if len(tok) < 2 or tok in STOPWORDS or tok.isdigit():
            continue
        seen.setdefault(tok, None)
    terms = list(seen)
    return terms[:max_terms] if max_terms else terms


@dataclass(frozen=True)
class PaperHit:
    title: str
    abstract: str = ""
    year: int = 0
    venue: str = ""
    source_id: str = ""

    def __post_init__(self) -> None:
        if not self.title:
            raise ValueError("PaperHit.title must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PaperHit:
        return cls(
            title=str(d.get("title") or ""),
            abstract=str(d.get("abstract") or ""),
            year=int(d.get("year") or 0),
            venue=str(d.get("venue") or ""),
            source_id=str(d.get("source_id") or ""),
        )


@dataclass(frozen=True)
class RankedHit:
    hit: PaperHit
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {**self.hit.to_dict(), "score": self.score}


def _contains(doc_tokens: str, term: str) -> bool:
    term_tokens = " ".join(tokenize(term))
    return bool(term_tokens) and f" {term_tokens} " in doc_tokens


def relevance(hit: PaperHit, task_terms: Sequence[str]) -> float:
    """Fraction of distinct task terms that occur in the title or abstract."""
    terms = list(dict.fromkeys(t.lower() for t in task_terms if tokenize(t)))
    if not terms:
        return 0.0
    doc = " " + " ".join(tokenize(hit.title + " " + hit.abstract)) + " "
    return sum(1 for t in terms if _contains(doc, t)) / len(terms)


def rank_papers(hits: Sequence[PaperHit], task_terms: Sequence[str]) -> list[RankedHit]:
    """Score hits by term overlap; ties go to newer papers, then to smaller source ids."""
    if not task_terms:
        raise ValueError("task_terms must be non-empty")
    ranked = [RankedHit(h, relevance(h, task_terms)) for h in hits]
    ranked.sort(key=lambda r: (-r.score, -r.hit.year, r.hit.source_id))
    return ranked


@dataclass
class SearchConfig:
    mode: str = "offline"  # "offline" | "online"
    corpus_dir: Path = BUNDLED_LITERATURE
    endpoint: str | None = None
    timeout_s: float = 30.0
    hits_path: str = "data"
    field_map: dict[str, str] = field(
        default_factory=lambda: {
            "title": "title",
            "abstract": "abstract",
            "year": "year",
            "venue": "venue",
            "source_id": "paperId",
        }
    )

    def __post_init__(self) -> None:
        self.corpus_dir = Path(self.corpus_dir)
        if self.mode not in ("offline", "online"):
            raise ValueError(f"unknown search mode {self.mode!r}")


class LiteratureSearch:
    """Scholarly search with an offline fixture corpus (default) or an HTTP endpoint."""

    def __init__(self, config: SearchConfig | None = None) -> None:
        self.config = config or SearchConfig()
        self._corpus: list[PaperHit] | None = None

    def corpus(self) -> list[PaperHit]:
        if self._corpus is None:
            hits: dict[str, PaperHit] = {}
            root = self.config.corpus_dir
            files = sorted(root.glob("*.json")) if root.is_dir() else []
            for path in files:
                for entry in json.loads(path.read_text(encoding="utf-8")):
                    hit = PaperHit.from_dict(entry)
                    hits.setdefault(hit.source_id or hit.title, hit)
            self._corpus = list(hits.values())
        return self._corpus

    def search(self, query: str, limit: int = 10) -> list[PaperHit]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        if not query or not query.strip():
            raise EmptyQuery("search query is empty")
        if self.config.mode == "online":
            return self._online(query, limit)
        terms = extract_terms(query) or tokenize(query)
        scored = [(relevance(h, terms), i, h) for i, h in enumerate(self.corpus())]
        matched = [(s, i, h) for s, i, h in scored if s > 0]
        matched.sort(key=lambda t: (-t[0], t[1]))
        return [h for _, _, h in matched[:limit]]

    def _online(self, query: str, limit: int) -> list[PaperHit]:
        cfg = self.config
        if not cfg.endpoint:
            raise SearchUnavailable("online search requires an endpoint")
        params = urllib.parse.urlencode(
            {"query": query, "limit": limit, "fields": "title,abstract,year,venue"}
        )
        url = f"{cfg.endpoint}?{params}"
        try:
            with urllib.request.urlopen(url, timeout=cfg.timeout_s) as resp:
                doc = json.loads(resp.read())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise SearchUnavailable(f"search endpoint failed: {exc}") from exc
        items = doc
        for part in cfg.hits_path.split(".") if cfg.hits_path else []:
            items = items.get(part, []) if isinstance(items, dict) else []
        hits = []
        for item in items or []:
            mapped = {k: item.get(src) for k, src in cfg.field_map.items()}
            if mapped.get("title"):
                hits.append(PaperHit.from_dict(mapped))
        return hits[:limit]


def search_literature(query: str, limit: int, search: LiteratureSearch | None = None) -> list[PaperHit]:
    return (search or LiteratureSearch()).search(query, limit)


# --------------------------------------------------------------------------
# workspaces and the sandbox
# --------------------------------------------------------------------------

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


@dataclass(frozen=True)
class Workspace:
    task_id: str
    root: Path
    created: datetime


def init_workspace(task_id: str, base_dir: str | Path) -> Workspace:
    """Create a fresh, empty run directory for ``task_id``.

    Earlier run directories of the same task are kept as an archive and
    never reused.
    """
    if not _SAFE_ID.match(task_id or ""):
        raise FilesystemError(f"task id {task_id!r} is not filesystem-safe")
    task_dir = Path(base_dir) / task_id
    try:
        task_dir.mkdir(parents=True, exist_ok=True)
        existing = [int(p.name[4:]) for p in task_dir.glob("run-*") if p.name[4:].isdigit()]
        n = max(existing, default=0) + 1
        while True:
            root = task_dir / f"run-{n:04d}"
            try:
                root.mkdir()
                break
            except FileExistsError:
                n += 1
    except OSError as exc:
        raise FilesystemError(f"cannot create workspace for {task_id}: {exc}") from exc
    return Workspace(task_id=task_id, root=root.resolve(), created=datetime.now(timezone.utc))


class ExitClass(str, Enum):
    SUCCESS = "Success"
    NONZERO_EXIT = "NonzeroExit"
    TIMEOUT = "Timeout"
    LAUNCH_ERROR = "LaunchError"


@dataclass
class ExecutionResult:
    exit_class: ExitClass
    exit_code: int | None
    stdout: str
    stderr: str
    wall_time: float
    artifacts: list[str]

    @property
    def ok(self) -> bool:
        return self.exit_class is ExitClass.SUCCESS

    def error_text(self, max_chars: int = 4000) -> str:
        if self.exit_class is ExitClass.TIMEOUT:
            head = f"Timeout after {self.wall_time:.1f} s"
        elif self.exit_class is ExitClass.NONZERO_EXIT:
            head = f"Process exited with code {self.exit_code}"
        elif self.exit_class is ExitClass.LAUNCH_ERROR:
            head = "Process could not be launched"
        else:
            head = "Success"
        tail = self.stderr[-max_chars:]
        return f"{head}\n{tail}".rstrip()


DEFAULT_TIMEOUT_S = 120.0


def _snapshot(root: Path) -> dict[str, tuple[int, int]]:
    out = {}
    for p in root.rglob("*"):
        if p.is_file():
            st = p.stat()
            out[p.relative_to(root).as_posix()] = (st.st_mtime_ns, st.st_size)
    return out


def sandbox_env(extra: Mapping[str, str] | None = None) -> dict[str, str]:
    env = dict(os.environ)
    src_dir = str(PACKAGE_ROOT.parent)
    env["PYTHONPATH"] = os.pathsep.join(p for p in (src_dir, env.get("PYTHONPATH")) if p)
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    env["PYTHONHASHSEED"] = "0"
    # single-threaded BLAS keeps floating-point reductions reproducible
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = "1"
    if extra:
        env.update(extra)
    return env


def execute_sandbox(
    ws: Workspace,
    command: Sequence[str],
    timeout: float = DEFAULT_TIMEOUT_S,
    env: Mapping[str, str] | None = None,
) -> ExecutionResult:
    """Run ``command`` inside ``ws.root`` with captured output and a hard timeout.

    On timeout the whole process group is killed. Never raises; every
    outcome is encoded in ``exit_class``.
    """
    if not command:
        raise ValueError("command must be non-empty")
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    before = _snapshot(ws.root)
    run_env = sandbox_env({"TMPDIR": str(ws.root), **(env or {})})
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            list(command),
            cwd=ws.root,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=run_env,
            start_new_session=True,
        )
    except OSError as exc:
        return ExecutionResult(ExitClass.LAUNCH_ERROR, None, "", str(exc), time.monotonic() - start, [])

    try:
        out, err = proc.communicate(timeout=timeout)
        timed_out = False
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
        timed_out = True
    wall = time.monotonic() - start

    after = _snapshot(ws.root)
    artifacts = sorted(p for p, sig in after.items() if before.get(p) != sig)
    stdout = out.decode("utf-8", errors="replace")
    stderr = err.decode("utf-8", errors="replace")
    if timed_out:
        return ExecutionResult(ExitClass.TIMEOUT, None, stdout, stderr, wall, artifacts)
    if proc.returncode == 0:
        return ExecutionResult(ExitClass.SUCCESS, 0, stdout, stderr, wall, artifacts)
    return ExecutionResult(ExitClass.NONZERO_EXIT, proc.returncode, stdout, stderr, wall, artifacts)


def python_command(script: str) -> list[str]:
    return [sys.executable, script]
