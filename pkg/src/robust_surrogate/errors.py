"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Array shapes do not agree with what an operation requires."""


class LengthMismatch(ValueError):
    """Flat vectors (parameters, gradients, moments) differ in length."""


class NotPositiveDefinite(ArithmeticError):
    """Cholesky factorization failed even after jitter escalation."""


class SolverDiverged(ArithmeticError):
    """The iterative elliptic solver hit its iteration cap before tolerance."""

    def __init__(self, message, iterations=None, residual=None, sample_index=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.sample_index = sample_index


class ZeroGradient(ArithmeticError):
    """The input gradient vanishes, so FGNM has no direction."""


class ZeroReference(ValueError):
    """A reference quantity (norm or moment array) is zero."""


class EmptyInput(ValueError):
    """An operation received an empty collection."""


class EmptyGroup(EmptyInput):
    """A rank-test group is empty."""


class DegenerateSample(ValueError):
    """All sample values are equal, so a spread estimate is zero."""


class DegenerateClasses(ValueError):
    """A class needed for discriminant analysis is empty or too small."""
