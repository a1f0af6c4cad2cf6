"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: validation problems exit 1, numeric
failures exit 2, acceptance-check failures exit 3.
"""


class SojdError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SojdError, ValueError):
    """Bad arguments, configuration, or input data."""


class ConfigError(ValidationError):
    """A run configuration is internally inconsistent."""


class InsufficientDataError(ValidationError):
    """Too few observations to form the requested statistic."""


class NumericError(SojdError, ArithmeticError):
    """A numeric procedure failed to meet its accuracy contract."""


class QuadratureError(NumericError):
    """Adaptive quadrature did not converge to the requested tolerance."""


class ExplosionError(NumericError):
    """The simulated state left the representable range."""

    def __init__(self, time: float, message: str | None = None):
        self.time = float(time)
        super().__init__(message or f"state became non-finite at t={time:.6g}")


class ExpansionUnstableError(NumericError):
    """Nested derivative noise overwhelmed the factorial damping."""


class NoDataNearPointError(NumericError):
    """Kernel mass underflowed at the evaluation point.

    The point lies outside the range the data visited, where the estimator
    is undefined.
    """
