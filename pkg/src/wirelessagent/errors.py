"""Exception hierarchy shared across the package."""

from __future__ import annotations


class WirelessAgentError(Exception):
    """Base class for every error raised by this package."""


# memory
class PersistenceFailure(WirelessAgentError):
    pass


class CorruptLedger(WirelessAgentError):
    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class MissingFile(WirelessAgentError):
    pass


class InvalidPayload(WirelessAgentError):
    pass


# agents
class UnknownTemplate(WirelessAgentError):
    pass


class MissingSlot(WirelessAgentError):
    def __init__(self, name: str) -> None:
        super().__init__(f"missing template slot: {name}")
        self.name = name


class InvalidStrategy(WirelessAgentError):
    pass


class BackendUnavailable(WirelessAgentError):
    """Transient transport failure; callers may retry."""


class FixtureMissing(WirelessAgentError):
    def __init__(self, key: str, detail: str = "") -> None:
        msg = f"no scripted fixture for key {key!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
        self.key = key


class MalformedResponse(WirelessAgentError):
    pass


class ProtocolError(WirelessAgentError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class NoDirective(WirelessAgentError):
    pass


# tools
class SearchUnavailable(WirelessAgentError):
    pass


class EmptyQuery(WirelessAgentError):
    pass


class FilesystemError(WirelessAgentError):
    pass


# wireless / solvers
class DistanceBelowReference(WirelessAgentError):
    pass


class ShapeMismatch(WirelessAgentError):
    pass


class NullSpaceEmpty(WirelessAgentError):
    pass


class Infeasible(WirelessAgentError):
    def __init__(self, e_min: float, bound: float) -> None:
        super().__init__(
            f"E_min={e_min:.3e} W exceeds certified harvestable bound {bound:.3e} W"
        )
        self.e_min = e_min
        self.bound = bound


# validation
class MalformedResults(WirelessAgentError):
    pass


class AdapterUnavailable(WirelessAgentError):
    pass


# orchestrator
class PlanRejected(WirelessAgentError):
    pass


class DataPrepFailed(WirelessAgentError):
    pass


# harness
class CorpusParseError(WirelessAgentError):
    def __init__(self, path: str, line: int, offset: int, reason: str) -> None:
        super().__init__(f"{path}:{line}:{offset}: {reason}")
        self.line = line
        self.offset = offset


class DuplicateTaskId(WirelessAgentError):
    pass


class EmptyLedger(WirelessAgentError):
    pass


class StageOrderViolation(WirelessAgentError):
    pass
