"""Exception types shared across the package."""


class SensingLimitsError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SensingLimitsError, ValueError):
    """A constructor or sampler parameter is outside its admissible range."""


class UnsupportedParameterError(InvalidParameterError):
    """A parameter value the theory does not cover (e.g. Wishart kappa = 1)."""


class DomainError(SensingLimitsError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class DivergenceError(SensingLimitsError, ArithmeticError):
    """The requested quantity is infinite (e.g. atom self-energy in log-energy)."""


class DegenerateChannelError(SensingLimitsError, ValueError):
    """Channel density evaluation requires strictly positive Gaussian noise."""


class ConvergenceError(SensingLimitsError, RuntimeError):
    """An iterative solve did not reach its residual target.

    Carries the worst residual observed so callers can report diagnostics.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericError(SensingLimitsError, RuntimeError):
    """A dense linear-algebra or quadrature step failed."""
