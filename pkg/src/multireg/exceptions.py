"""Exception types raised by multireg."""


class MultiregError(Exception):
    """Base class for all package errors."""


class SingularSystemError(MultiregError):
    """The normal equations of a quadratic Tikhonov problem are singular.

    Attributes
    ----------
    direction : ndarray
        Unit vector spanning (numerically) the offending null space.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class NonConvergenceError(MultiregError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    The best iterate found so far is kept on ``best`` (a SolveRecord).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CapabilityError(MultiregError):
    """The request lies outside what the library implements."""


class UnsupportedPenaltyError(CapabilityError):
    """The requested penalty combination has no solver."""


class DegeneratePenaltyError(MultiregError):
    """A penalty vanished at an iterate of a balancing rule."""
