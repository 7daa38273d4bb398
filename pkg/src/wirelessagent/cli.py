"""Command-line entry point: ``wirelessagent <command> ...``.

Exit codes: 0 on success, 1 when a task ends Exhausted or Aborted, 2 on
usage errors (bad flags, unreadable inputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import harness, solvers, wireless
from .agents import BackendConfig
from .errors import WirelessAgentError
from .memory import SystemMemory, iter_ledger
from .orchestrator import OrchestratorConfig, Status, load_task, run_task
from .tools import LiteratureSearch, SearchConfig

EXIT_OK = 0
EXIT_TASK_FAILED = 1
EXIT_USAGE = 2

CONFIG_SECTIONS = ("orchestrator", "scenario", "backend", "search")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would call sys.exit directly
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every stochastic component (default 0)")
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS, help="more logging")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="wirelessagent", description="Agentic wireless optimisation runtime.", parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", parents=[common], help="run one task through the four stages")
    run.add_argument("--task", type=Path, required=True, help="task JSON file")
    run.add_argument("--backend", choices=("scripted", "live"), default=None)
    run.add_argument("--fixtures", default=None, help="fixture directory or bundled fixture-set name")
    run.add_argument("--max-attempts", type=int, default=None)
    run.add_argument("--out", type=Path, default=Path("runs"))

    bench = sub.add_parser("bench", parents=[common], help="run a task corpus and report Table-1 metrics")
    bench.add_argument("--corpus", type=Path, default=harness.BUNDLED_CORPUS)
    bench.add_argument("--backend", choices=("scripted", "live"), default=None)
    bench.add_argument("--fixture-root", type=Path, default=harness.BUNDLED_FIXTURES)
    bench.add_argument("--parallel", type=int, default=1)
    bench.add_argument("--max-attempts", type=int, default=None)
    bench.add_argument("--out", type=Path, default=Path("bench"))

    sweep = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sum-rate sweep")
    sweep.add_argument("axis", choices=("power", "antennas"))
    sweep.add_argument("--drops", type=int, default=50)
    sweep.add_argument("--grid", type=float, nargs="+", default=None, help="grid values (dBm or antenna counts)")
    sweep.add_argument("--out", type=Path, default=Path("."))

    gm = sub.add_parser("gainmap", parents=[common], help="channel-gain map over the deployment region")
    gm.add_argument("--step", type=float, default=1.0, help="grid step in metres")
    gm.add_argument("--deterministic", action="store_true", help="path loss only (no shadowing, pure LoS)")
    gm.add_argument("--out", type=Path, default=Path("."))

    insp = sub.add_parser("inspect", parents=[common], help="print the records of one task from a ledger")
    insp.add_argument("--ledger", type=Path, required=True)
    insp.add_argument("--task", required=True)
    insp.add_argument("--canonical", action="store_true", help="print canonical JSON lines")
    return parser


def _load_config(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) - set(CONFIG_SECTIONS):
        raise UsageError(f"config must be an object with sections {', '.join(CONFIG_SECTIONS)}")
    return doc


def _backend_config(section: dict[str, Any], mode: str | None, fixture_dir: Path | None) -> BackendConfig:
    data = dict(section)
    if mode is not None:
        data["mode"] = mode
    if fixture_dir is not None:
        data["fixture_dir"] = fixture_dir
    return BackendConfig.from_dict(data)


def _orchestrator_config(section: dict[str, Any], max_attempts: int | None) -> OrchestratorConfig:
    data = dict(section)
    if max_attempts is not None:
        data["max_attempts"] = max_attempts
    return OrchestratorConfig.from_dict(data)


def _resolve_fixtures(ref: str | None, task_id: str) -> Path:
    if ref is None:
        return harness.BUNDLED_FIXTURES / task_id
    path = Path(ref)
    if path.is_dir():
        return path
    bundled = harness.BUNDLED_FIXTURES / ref
    if bundled.is_dir():
        return bundled
    raise UsageError(f"fixture set {ref!r} not found")


def cmd_run(args: argparse.Namespace, config: dict[str, Any]) -> int:
    try:
        task = load_task(args.task)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read task {args.task}: {exc}") from exc
    backend_section = config.get("backend", {})
    mode = args.backend or backend_section.get("mode", "scripted")
    fixtures = _resolve_fixtures(args.fixtures, task.task_id) if mode == "scripted" else None
    backend = harness.Backend(_backend_config(backend_section, mode, fixtures))
    orch = _orchestrator_config(config.get("orchestrator", {}), args.max_attempts)
    search = LiteratureSearch(SearchConfig(**config.get("search", {})))

    out: Path = args.out
    ledger = out / "ledger.jsonl"
    out.mkdir(parents=True, exist_ok=True)
    ledger.unlink(missing_ok=True)
    memory = SystemMemory(ledger)
    outcome = run_task(task, orch, backend, search, memory, out / "workspaces")
    summary = {"task_id": task.task_id, **outcome.to_dict()}
    (out / "outcome.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return EXIT_OK if outcome.status is Status.SOLVED else EXIT_TASK_FAILED


def cmd_bench(args: argparse.Namespace, config: dict[str, Any]) -> int:
    try:
        tasks = harness.load_corpus(args.corpus)
    except OSError as exc:
        raise UsageError(f"cannot read corpus {args.corpus}: {exc}") from exc
    if not tasks:
        raise UsageError("corpus is empty")
    backend_section = config.get("backend", {})
    settings = harness.RunSettings(
        orchestrator=_orchestrator_config(config.get("orchestrator", {}), args.max_attempts),
        backend=_backend_config(backend_section, args.backend, None),
        search=SearchConfig(**config.get("search", {})),
        fixture_root=args.fixture_root,
        out_dir=args.out,
    )
    entries = harness.run_corpus(tasks, settings, parallelism=args.parallel)
    metrics = harness.compute_metrics(entries)
    harness.write_ledger(entries, args.out / "run_ledger.json")
    harness.emit_report(metrics, args.out)
    for e in entries:
        print(f"{e.task_id}: {e.outcome.status.value} (attempts {e.outcome.attempts_used})")
    print()
    print(metrics.to_table(), end="")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: dict[str, Any], seed: int) -> int:
    cfg = wireless.ScenarioConfig.from_dict(config.get("scenario", {}))
    if args.axis == "power":
        grid = args.grid if args.grid is not None else list(range(30, 44))
        result = solvers.sweep_power(cfg, grid, drops=args.drops, base_seed=seed)
    else:
        grid = [int(m) for m in args.grid] if args.grid is not None else list(range(4, 9))
        result = solvers.sweep_antennas(cfg, grid, drops=args.drops, base_seed=seed)
    path = harness.emit_report(result, args.out / f"sweep_{args.axis}.csv")[0]
    for p in result.points:
        cells = "  ".join(f"{sid} {p.stats[sid].mean_rate:7.3f}" for sid in solvers.SOLVER_IDS)
        print(f"{args.axis}={p.value:g}: {cells}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gainmap(args: argparse.Namespace, config: dict[str, Any], seed: int) -> int:
    cfg = wireless.ScenarioConfig.from_dict(config.get("scenario", {}))
    name = "gainmap.csv"
    if args.deterministic:
        cfg = cfg.with_overrides(sigma_sh=0.0, K_rician=float("inf"))
        name = "gainmap_deterministic.csv"
    gmap = wireless.gain_map(cfg, args.step, seed)
    path = harness.emit_report(gmap, args.out / name)[0]
    print(f"{gmap.values.size} points, mean gain {gmap.values.mean():.2f} dB")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    if not args.ledger.is_file():
        raise UsageError(f"ledger {args.ledger} not found")
    found = False
    for rec in iter_ledger(args.ledger):
        if rec.task_id != args.task:
            continue
        found = True
        if args.canonical:
            print(rec.canonical())
            continue
        payload = rec.payload
        brief = ""
        if rec.kind == "task_outcome":
            brief = payload["outcome"]["status"]
        elif rec.kind == "score_report":
            r = payload["report"]
            brief = f"attempt {payload['attempt']} {r['branch']} score {r['score']:.3f} solved {r['solved']}"
        elif rec.kind == "exec_result":
            brief = f"{payload['exit_class']} exit {payload['exit_code']}"
        elif rec.kind == "plan_review":
            brief = payload["verdict"]
        elif rec.kind == "stage_note":
            brief = f"{payload['level']}: {payload['message']}"
        elif rec.kind == "agent_exchange":
            brief = payload["key"]
        print(f"{rec.seq:4d}  {rec.stage.value:<10} {rec.role.value:<18} {rec.kind:<18} {brief}".rstrip())
    if not found:
        print(f"no records for task {args.task!r}", file=sys.stderr)
        return EXIT_TASK_FAILED
    return EXIT_OK


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    seed = getattr(args, "seed", 0)
    try:
        config = _load_config(getattr(args, "config", None))
        if args.command == "run":
            return cmd_run(args, config)
        if args.command == "bench":
            return cmd_bench(args, config)
        if args.command == "sweep":
            return cmd_sweep(args, config, seed)
        if args.command == "gainmap":
            return cmd_gainmap(args, config, seed)
        return cmd_inspect(args)
    except UsageError as exc:
        print(f"wirelessagent: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (TypeError, ValueError) as exc:
        print(f"wirelessagent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WirelessAgentError as exc:
        print(f"wirelessagent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILED


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
