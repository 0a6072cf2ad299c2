"""Exception hierarchy shared by all modules."""


class KillingFlowError(Exception):
    """Base class for every error raised by the package."""


class DomainError(KillingFlowError):
    """A point lies outside the chart or the geometry's domain of definition."""


class GeometryError(KillingFlowError):
    """The ambient data violate a structural requirement (e.g. non-SPD metric)."""


class ConfigError(KillingFlowError):
    """Invalid user input: bad configuration, boundary data or grid mismatch."""

    def __init__(self, message, violations=None):
        self.violations = list(violations or [])
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class NumericError(KillingFlowError):
    """Non-finite values appeared in a computation."""


class UnsupportedRegimeError(KillingFlowError):
    """The requested check is not implemented for this geometry."""


class SolverError(KillingFlowError):
    """A nonlinear or linear solve failed; ``history`` holds residual norms."""

    def __init__(self, message, history=None):
        self.history = list(history or [])
        super().__init__(message)
