"""Shared exception types.

ContractError marks a violated precondition (caller bug); DomainError marks
numerically invalid input (zero vectors, all-pad sequences); the rest are
runtime failures with a specific remedy.
"""


class ContractError(ValueError):
    """A documented precondition was violated."""


class DomainError(ValueError):
    """Input is outside the mathematical domain of the operation."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class FrozenWriteError(RuntimeError):
    """Attempted to update a frozen parameter."""


class ReportParseError(ValueError):
    """A persisted report or matrix file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
