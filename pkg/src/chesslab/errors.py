"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class ChessError(Exception):
    """Base class for every error raised by the harness."""


class SchedulingInPast(ChessError):
    pass


class DuplicateDeployment(ChessError):
    pass


class ServiceNotFound(ChessError):
    pass


class FaultTargetEmpty(ServiceNotFound):
    """The deployment exists but has no live pod to carry a fault."""


class UnknownOption(ChessError):
    pass


class UnknownScenario(ChessError):
    pass


class ProbeTypeMismatch(ChessError):
    pass


class TargetMissing(ChessError):
    pass


class AlreadyAttached(ChessError):
    pass


class SinkUnwritable(ChessError):
    pass


class ScenarioMismatch(ChessError):
    pass


class NoRuleMatched(ChessError):
    pass


class ParseError(ChessError):
    """Malformed experiment or topology document."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ChessError):
    """Structurally valid document that violates the experiment contract."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
