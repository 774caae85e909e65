"""Exception types shared across the package."""


class TreeGoptError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TreeGoptError):
    """Raised when an expression string cannot be parsed."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class DomainError(TreeGoptError):
    """Raised when an expression is evaluated outside its domain.

    ``subexpression`` carries the printed form of the innermost node that
    failed (e.g. the ``log(...)`` call that received a non-positive input).
    """

    def __init__(self, message, subexpression=None):
        super().__init__(message)
        self.subexpression = subexpression

    def __str__(self):
        base = super().__str__()
        if self.subexpression is not None:
            return f"{base} in subexpression '{self.subexpression}'"
        return base


class ProblemError(TreeGoptError):
    """Raised for malformed or inconsistent optimization problems."""


class UnboundedVariableError(ProblemError):
    """A variable needed by the pipeline has no finite bounds and none can
    be derived from the linear constraints."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(
            "variables cannot be bounded (no declared bounds and the linear "
            f"constraints do not imply any): {', '.join(self.names)}"
        )


class SamplingError(TreeGoptError):
    """Raised when a sampling stage cannot proceed (e.g. no feasible point)."""


class TrainingError(TreeGoptError):
    """Raised when tree training preconditions are violated."""


class EncodingError(TreeGoptError):
    """Raised when a tree cannot be encoded into MILP form."""


class SolverError(TreeGoptError):
    """Raised for solver backend failures (not for infeasible/unbounded
    statuses, which are reported through the result object)."""


class ExternalSolverError(SolverError):
    """Raised when an external solver invocation fails or its reported
    solution does not validate against the instance."""

    def __init__(self, message, artifacts=None):
        super().__init__(message)
        # Paths of the files handed to / produced by the external command,
        # kept for post-mortem inspection.
        self.artifacts = dict(artifacts or {})


class InputError(TreeGoptError):
    """Raised by the CLI layer for unusable input files or arguments."""
