"""Exception types shared across the package.

The CLI maps these onto exit codes: CapacityError -> 3,
AccuracyError / SolverError -> 4, usage problems -> 2.
"""


class CapacityError(RuntimeError):
    """A requested object would exceed a configured size limit."""

    def __init__(self, message, requested=None, limit=None):
        super().__init__(message)
        self.requested = requested
        self.limit = limit


class AccuracyError(RuntimeError):
    """A computation cannot reach the requested tolerance."""


class SolverError(RuntimeError):
    """An iterative solver did not converge within its budget."""

    def __init__(self, message, last_residual=None, iterations=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class ContractViolation(ValueError):
    """An input violates a documented precondition."""
