"""Rule-based scoring of simulation results.

A simulation run must leave ``results.json`` in its workspace with the
fields ``rates_bps_hz`` (per IR), ``harvested_w`` (per ER) and
``total_power_w``, optionally ``sweep`` (list of ``{p_dbm, rate}`` with an
optional ``stderr``) and ``baselines`` (``{zf_rate, wmmse_rate}``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from .errors import AdapterUnavailable, WirelessAgentError
from .wireless import ScenarioConfig

RESULTS_FILE = "results.json"
POWER_RTOL = 1e-6
EH_ATOL = 1e-12


class Branch(str, Enum):
    ERROR_HANDLING = "ErrorHandling"
    WIRELESS_VALIDITY = "WirelessValidity"


@dataclass
class CheckResult:
    check_id: str
    mandatory: bool
    passed: bool
    detail: str
    measured: float | None = None

    def __post_init__(self) -> None:
        if not self.passed and not self.detail:
            raise ValueError("failed checks need a detail message")

    def to_dict(self) -> dict[str, Any]:
        measured = self.measured
        if measured is not None and not math.isfinite(measured):
            measured = None
        return {
            "check_id": self.check_id,
            "mandatory": self.mandatory,
            "passed": self.passed,
            "detail": self.detail,
            "measured": measured,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CheckResult:
        return cls(d["check_id"], d["mandatory"], d["passed"], d["detail"], d.get("measured"))


@dataclass
class ScoreReport:
    branch: Branch
    checks: list[CheckResult]
    score: float
    solved: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "branch": self.branch.value,
            "checks": [c.to_dict() for c in self.checks],
            "score": self.score,
            "solved": self.solved,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ScoreReport:
        return cls(
            Branch(d["branch"]),
            [CheckResult.from_dict(c) for c in d["checks"]],
            float(d["score"]),
            bool(d["solved"]),
            list(d.get("notes", [])),
        )

    def to_text(self) -> str:
        lines = [f"branch: {self.branch.value}", f"score: {self.score:.4f}", f"solved: {self.solved}"]
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            kind = "mandatory" if c.mandatory else "optional"
            lines.append(f"[{tag}] {c.check_id} ({kind}): {c.detail}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _finite(x: Any) -> bool:
    return _is_number(x) and math.isfinite(x)


def _parse_failure(reason: str) -> list[CheckResult]:
    return [CheckResult("results_parse", True, False, f"malformed results document: {reason}")]


def run_checks(results: Any, scenario: ScenarioConfig) -> list[CheckResult]:
    """Feasibility and sanity checks on one results document."""
    if not isinstance(results, Mapping):
        return _parse_failure("top level is not an object")
    for name in ("rates_bps_hz", "harvested_w"):
        if not isinstance(results.get(name), list):
            return _parse_failure(f"{name} missing or not a list")
    if "total_power_w" not in results:
        return _parse_failure("total_power_w missing")

    checks: list[CheckResult] = []
    budget = scenario.P_max * (1.0 + POWER_RTOL)
    power = results["total_power_w"]
    if _finite(power) and 0.0 <= power <= budget:
        checks.append(
            CheckResult("power_budget", True, True, f"{power:.6g} W <= {scenario.P_max:.6g} W", power)
        )
    else:
        shown = f"{power:.6g} W" if _is_number(power) else repr(power)
        checks.append(
            CheckResult(
                "power_budget",
                True,
                False,
                f"total power {shown} exceeds budget {scenario.P_max:.6g} W or is invalid",
                float(power) if _is_number(power) else None,
            )
        )

    harvested = results["harvested_w"]
    bad = []
    if len(harvested) != scenario.J:
        eh = CheckResult(
            "eh_min", True, False, f"expected {scenario.J} harvested values, got {len(harvested)}"
        )
    else:
        for j, e in enumerate(harvested):
            if not _finite(e) or e < scenario.E_min - EH_ATOL:
                bad.append(f"E_{j}={e!r}")
        lowest = min((e for e in harvested if _finite(e)), default=None)
        if bad:
            eh = CheckResult(
                "eh_min", True, False, f"below E_min={scenario.E_min:.3g} W: {', '.join(bad)}", lowest
            )
        else:
            eh = CheckResult("eh_min", True, True, f"all E_j >= {scenario.E_min:.3g} W", lowest)
    checks.append(eh)

    rates = results["rates_bps_hz"]
    bad_rates = [f"rate_{k}={r!r}" for k, r in enumerate(rates) if not (_finite(r) and r >= 0)]
    if not rates:
        checks.append(CheckResult("rate_sane", True, False, "no rates reported"))
    elif bad_rates:
        checks.append(CheckResult("rate_sane", True, False, "invalid rates: " + ", ".join(bad_rates)))
    else:
        checks.append(CheckResult("rate_sane", True, True, f"{len(rates)} finite non-negative rates", float(sum(rates))))

    sweep = results.get("sweep")
    if sweep is not None:
        checks.append(_monotone_check(sweep))

    baselines = results.get("baselines")
    if isinstance(baselines, Mapping) and baselines.get("zf_rate") is not None:
        zf = baselines["zf_rate"]
        proposed = float(sum(rates)) if not bad_rates and rates else float("nan")
        ok = _finite(zf) and math.isfinite(proposed) and proposed >= zf - 1e-9
        detail = f"proposed {proposed:.4f} vs ZF {zf!r} bps/Hz"
        checks.append(CheckResult("baseline_order", False, ok, detail, proposed if math.isfinite(proposed) else None))
    return checks


def _monotone_check(sweep: Any) -> CheckResult:
    try:
        pts = sorted(
            ((float(p["p_dbm"]), float(p["rate"]), float(p.get("stderr", 0.0))) for p in sweep),
            key=lambda t: t[0],
        )
    except (TypeError, KeyError, ValueError):
        return CheckResult("rate_monotone", False, False, "sweep entries need numeric p_dbm and rate")
    inversions = []
    for (p0, r0, s0), (p1, r1, s1) in zip(pts, pts[1:]):
        if r1 < r0:
            inversions.append((p1, r0 - r1, 2.0 * max(s0, s1)))
    if not inversions:
        return CheckResult("rate_monotone", False, True, "rate non-decreasing in transmit power")
    if len(inversions) == 1 and inversions[0][1] <= inversions[0][2]:
        p, drop, allow = inversions[0]
        return CheckResult("rate_monotone", False, True, f"one inversion at {p} dBm within 2x stderr ({drop:.3g} <= {allow:.3g})")
    where = ", ".join(f"{p} dBm (-{d:.3g})" for p, d, _ in inversions)
    return CheckResult("rate_monotone", False, False, f"rate decreases with power at {where}")


def aggregate_score(
    checks: Sequence[CheckResult], branch: Branch = Branch.WIRELESS_VALIDITY
) -> ScoreReport:
    """Equal-weight pass fraction; solved iff every mandatory check passed."""
    if not checks:
        raise ValueError("checks must be non-empty")
    passed = sum(1 for c in checks if c.passed)
    solved = all(c.passed for c in checks if c.mandatory)
    return ScoreReport(branch, list(checks), passed / len(checks), solved)


def error_report(error_text: str) -> ScoreReport:
    """Error-branch report: score 0 and the captured failure as the only check."""
    check = CheckResult("execution", True, False, error_text or "execution failed")
    return ScoreReport(Branch.ERROR_HANDLING, [check], 0.0, False)


def score_results_text(text: str, scenario: ScenarioConfig) -> ScoreReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return aggregate_score(_parse_failure(f"invalid JSON ({exc.msg})"))
    return aggregate_score(run_checks(doc, scenario))


_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def parse_reward(text: str) -> float:
    m = _NUMBER.search(text)
    if m is None:
        raise AdapterUnavailable("reward reply contains no number")
    value = float(m.group(0))
    if not 0.0 <= value <= 1.0:
        raise AdapterUnavailable(f"reward {value} outside [0, 1]")
    return value


def reward_adapter(
    results: Any,
    query: str,
    backend: Any,
    *,
    iteration: int = 0,
    memory: Any = None,
    task_id: str | None = None,
) -> float:
    """Ask the Scoring role for a scalar reward in [0, 1].

    Any backend failure or unusable reply surfaces as AdapterUnavailable.
    """
    from .agents import AgentMessage, AgentRole, PromptStrategy, render_prompt

    prompt = render_prompt(
        AgentRole.SCORING, PromptStrategy.DIRECT, "reward_model", {"query": query, "results": results}
    )
    try:
        reply = backend.complete(
            AgentMessage(AgentRole.SCORING, PromptStrategy.DIRECT, prompt),
            stage="stage4",
            iteration=iteration,
            memory=memory,
            task_id=task_id,
            memory_stage="Simulation",
        )
    except WirelessAgentError as exc:
        raise AdapterUnavailable(str(exc)) from exc
    return parse_reward(reply)


def combine_scores(rule_score: float, adapter_score: float | None) -> float:
    return rule_score if adapter_score is None else min(rule_score, adapter_score)
