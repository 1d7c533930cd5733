"""Exception hierarchy shared by all modules."""


class ErgodicBemError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(ErgodicBemError, ValueError):
    """Invalid parameters: unknown model id, bad step size, divisibility, ..."""


class ContractViolation(ErgodicBemError, ValueError):
    """An operation was called outside its documented preconditions."""


class DiagnosticError(ErgodicBemError):
    """A diagnostic probe produced non-finite values."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SolverError(ErgodicBemError):
    """The implicit Newton solve failed.

    Carries the last residual norm and, when known, the step and path index
    so callers can emit machine-readable failure records.
    """

    def __init__(self, message, residual=float("nan"), step=None, path=None, row=None):
        super().__init__(message)
        self.residual = residual
        self.step = step
        self.path = path
        self.row = row  # row of the failing state within its simulated block

    def as_dict(self):
        return {
            "error": "solver",
            "message": str(self),
            "residual": self.residual,
            "step": self.step,
            "path": self.path,
        }


class ErgodicityCheckError(ErgodicBemError):
    """Ergodic-limit estimates from different initial values disagree."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate
