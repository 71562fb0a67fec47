"""Exception types shared across the package."""


class RGLError(Exception):
    """Base class for errors raised by :mod:`rgl`."""


class ValidationError(RGLError, ValueError):
    """Malformed input: wrong shape, not Hermitian, not a state, ..."""


class DomainError(RGLError, ValueError):
    """Argument outside the domain of a function (e.g. log of a non-positive eigenvalue)."""


class RangeError(RGLError, ValueError):
    """A constructed point left the state space (lost strict positivity)."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NumericalError(RGLError, ArithmeticError):
    """A numerical procedure failed to converge or produced non-finite values."""

    def __init__(self, message, residual=None, sequence=None):
        super().__init__(message)
        self.residual = residual
        self.sequence = sequence
