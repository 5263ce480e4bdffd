"""Exception types shared across the package."""


class GLLabError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(GLLabError, ValueError):
    """An argument violates a documented precondition."""


class NumericFailureError(GLLabError, ArithmeticError):
    """A quadrature or iterative solve did not converge."""


class IntegratorDivergedError(GLLabError, ArithmeticError):
    """Time stepping produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class UnsupportedPotentialError(GLLabError, ValueError):
    """The operation is only defined for the quadratic potential."""


class InvalidChainError(GLLabError, ValueError):
    """Input is not a valid irreducible reversible generator."""


class InvalidObservableError(GLLabError, ValueError):
    """An observable fails the vanishing conditions required here."""


class InvalidCurveError(GLLabError, ValueError):
    """A scaling curve is unusable (too short, nonpositive norms)."""


class EnvelopeViolationError(GLLabError, RuntimeError):
    """Rejection-sampler envelope exceeded; indicates a construction bug."""


class MixingWarning(UserWarning):
    """Canonical MCMC effective sample size fell below threshold."""
