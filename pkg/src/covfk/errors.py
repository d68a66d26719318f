"""Exception types shared across the package."""


class CovFKError(Exception):
    pass


class DomainError(CovFKError, ValueError):
    """Input outside the domain of an operation (t <= 0, point off-chart, ...)."""


class ConvergenceError(CovFKError, ArithmeticError):
    """A series did not reach the requested tolerance within its term cap."""

    def __init__(self, message, achieved_bound=None):
        super().__init__(message)
        self.achieved_bound = achieved_bound


class ChartError(CovFKError, RuntimeError):
    """Chart bookkeeping is inconsistent. Indicates an atlas bug."""


class NonFiniteSampleError(CovFKError, FloatingPointError):
    def __init__(self, message, n_rejected=0):
        super().__init__(message)
        self.n_rejected = n_rejected


class UnsupportedCoefficientError(CovFKError, TypeError):
    """Coefficient data cannot be assembled exactly by the spectral oracle."""


class ConfigError(CovFKError, ValueError):
    pass
