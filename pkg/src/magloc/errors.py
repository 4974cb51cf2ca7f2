"""Exception hierarchy shared by all magloc modules."""

from __future__ import annotations


class MaglocError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MaglocError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """A field was requested at (or too close to) a point source."""


class InsufficientDataError(MaglocError, ValueError):
    """Too few usable samples to perform a fit."""


class GeometryError(MaglocError, ValueError):
    """Anchor geometry is degenerate for the requested solve."""


class InsufficientAnchorsError(MaglocError, ValueError):
    """Fewer than three transmitters produced usable distances."""


class SchemaError(MaglocError, ValueError):
    """A file or feature vector does not match the expected layout."""


class ConvergenceError(MaglocError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    The best iterate reached so far is kept on ``last_iterate`` so callers
    can still inspect or use it.
    """

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
