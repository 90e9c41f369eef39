"""Exception hierarchy shared by all stip modules."""

import numpy as np


class StipError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(StipError, ValueError):
    """An argument has the wrong shape, sign or type."""


class DomainError(InvalidArgumentError):
    """A value lies outside the domain of a transformation."""


class UnsupportedDimensionError(InvalidArgumentError):
    """The operation is only defined for a specific state dimension."""


class ConfigurationError(InvalidArgumentError):
    """An experiment or model configuration is inconsistent."""


class SingularMatrixError(StipError, np.linalg.LinAlgError):
    """A covariance matrix could not be factorized."""


class DivergenceError(StipError, ArithmeticError):
    """ODE integration produced a non-finite or unbounded state.

    Attributes
    ----------
    last_finite_time : float
        Last time at which the state was still finite and bounded.
    """

    def __init__(self, message, last_finite_time=float("nan")):
        super().__init__(message)
        self.last_finite_time = last_finite_time
