"""Exception and warning types raised across the package."""


class QuasiError(Exception):
    """Base class for every error raised by quasipost."""


class ValidationError(QuasiError, ValueError):
    """Inputs violate a documented restriction (shapes, domains, schema)."""


class DomainError(QuasiError, ValueError):
    """A mean or parameter value falls outside the admissible domain."""


class EvaluationError(QuasiError, ArithmeticError):
    """A quasi-likelihood term evaluated to a non-finite number."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class QuadratureError(QuasiError, ArithmeticError):
    """Adaptive quadrature failed to reach tolerance."""


class SingularInformationError(QuasiError, ArithmeticError):
    """An information-type matrix is singular or not positive definite."""


class DivergenceError(QuasiError, ArithmeticError):
    """Fisher scoring did not converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None, score_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.score_norm = score_norm


class DegreesOfFreedomError(QuasiError, ValueError):
    """Not enough observations for the requested estimator."""


class InitializationError(QuasiError, RuntimeError):
    """No chain start with finite log density could be found."""


class ReplicateFailureError(QuasiError, RuntimeError):
    """Too many replicates of a simulation study failed."""


class PerfectFitWarning(UserWarning):
    """All residuals are exactly zero, so the dispersion estimate is 0."""


class UnderdispersionWarning(UserWarning):
    """Dispersion below one: the coarsening interpretation does not apply."""
