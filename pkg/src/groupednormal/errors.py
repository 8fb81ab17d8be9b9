"""Exception hierarchy shared by every module of the package."""


class GroupedNormalError(Exception):
    """Base class for all package errors."""


class MalformedEdge(GroupedNormalError, ValueError):
    pass


class NegativeCount(GroupedNormalError, ValueError):
    pass


class ShapeMismatch(GroupedNormalError, ValueError):
    pass


class IndexOutOfRange(GroupedNormalError, IndexError):
    pass


class DomainError(GroupedNormalError, ValueError):
    pass


class NonPositiveDefinite(GroupedNormalError, ValueError):
    pass


class ToleranceNotReached(GroupedNormalError, RuntimeError):
    """Quasi-Monte-Carlo budget exhausted before the error target was met.

    The best estimate and its error bound are attached so callers can decide
    whether to use them anyway.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class EmptyCell(GroupedNormalError, ValueError):
    """A rectangle carries (numerically) zero probability under the model."""


class DegenerateCell(GroupedNormalError, ValueError):
    """A cell with a positive count has zero model probability."""


class MixingFailure(GroupedNormalError, RuntimeError):
    pass


class SingularInformation(GroupedNormalError, ValueError):
    pass


class NoConvergence(GroupedNormalError, RuntimeError):
    pass


class MalformedCSV(GroupedNormalError, ValueError):
    """Header or field syntax problems in a grouped-data CSV."""
