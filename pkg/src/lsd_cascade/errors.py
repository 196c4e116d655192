"""Exception hierarchy shared by all modules.

The CLI maps these onto its exit codes, so every raise site picks the
narrowest class that describes the failure.
"""


class LsdCascadeError(Exception):
    """Base class for all package errors."""


class ValidationError(LsdCascadeError, ValueError):
    """Invalid parameters or malformed input data."""


class DomainError(LsdCascadeError, ValueError):
    """A formula evaluated outside its mathematical domain."""


class InsufficientLiquidity(LsdCascadeError):
    """A trade would drain (or not fit into) the pool."""


class NonConvergence(LsdCascadeError, ArithmeticError):
    """A Newton solver failed to converge within its iteration budget."""


class EventSchemaError(ValidationError):
    """An event-log line does not match the JSON-lines schema."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message
