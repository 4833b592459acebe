"""Exception hierarchy.

Everything raised deliberately by the package derives from ``RegpercError`` so
the CLI can map it to an exit code in one place.
"""


class RegpercError(Exception):
    """Base class for all package errors."""


class PreconditionError(RegpercError, ValueError):
    """An operation was called outside its documented domain."""


class ParityError(PreconditionError):
    """``n * d`` is odd, so no d-regular graph on n vertices exists."""

    def __init__(self, n, d):
        super().__init__(f"n*d must be even (got n={n}, d={d})")
        self.n = n
        self.d = d


class SwitchingError(PreconditionError):
    """A 4-cycle does not satisfy the edge/non-edge conditions of a switching."""


class AttemptsExhaustedError(RegpercError):
    """Rejection sampling did not produce a simple graph within the budget."""


class EnumerationCapError(PreconditionError):
    """Exhaustive enumeration was requested beyond the supported size."""


class ExhaustedError(RegpercError):
    """The exploration has explored every vertex and has no frontier left."""


class InconsistentStateError(RegpercError):
    """Structures passed to a checker contradict each other or the graph."""


class EmptyFilterError(RegpercError):
    """No observation survived the requested filters."""


class DisconnectedError(PreconditionError):
    """A connected input was required."""
