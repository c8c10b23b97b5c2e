"""Exception hierarchy shared by every layer of the verifier."""

from __future__ import annotations


class QrvError(Exception):
    """Base class for all verifier errors."""


# operator core
class VariableClash(QrvError):
    pass


class UnknownVariable(QrvError):
    pass


class NotHermitian(QrvError):
    pass


class DimensionMismatch(QrvError):
    pass


class NotTraceNonIncreasing(QrvError):
    pass


class NotConverged(QrvError):
    def __init__(self, message: str, iterations: int = 0, last_delta: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.last_delta = last_delta


class NotMonotone(QrvError):
    pass


class LimitExceeded(QrvError):
    """A resource cap (live configurations during exploration) was hit."""


# language / static checks
class StaticError(QrvError):
    """Errors reported by the type checker (CLI exit code 2)."""


class NonUnitary(StaticError):
    pass


class IncompleteMeasurement(StaticError):
    pass


class ArityMismatch(StaticError):
    pass


class TypeMismatch(StaticError):
    pass


class UnknownName(StaticError):
    pass


class MissingArm(StaticError):
    pass


class FreshExhausted(StaticError):
    pass


class QrvSyntaxError(StaticError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.line = line
        self.col = col


# semantics
class IllTyped(QrvError):
    pass


class UnboundParam(QrvError):
    pass


# assertions
class MissingAssignment(QrvError):
    pass


class SideConditionViolated(QrvError):
    pass


class IllegitimateFormula(QrvError):
    pass


# proof checking
class RuleMismatch(QrvError):
    def __init__(self, step_id: str, reason: str):
        super().__init__(f"step {step_id}: {reason}")
        self.step_id = step_id
        self.reason = reason


class UndischargedAssumption(QrvError):
    pass


class UnknownSideCondition(QrvError):
    def __init__(self, step_id: str, reason: str):
        super().__init__(f"step {step_id}: {reason}")
        self.step_id = step_id
        self.reason = reason
