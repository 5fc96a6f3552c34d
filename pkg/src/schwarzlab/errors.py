"""Exception types shared across the toolkit."""


class SchwarzLabError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(SchwarzLabError):
    pass


class NotSPDError(SchwarzLabError):
    """Raised when a factorization or eigensolve needs an SPD operator.

    ``pivot`` is the 0-based index of the first failing pivot when the
    backend reports one, else None.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class RankDeficientError(SchwarzLabError):
    """Raised by orthonormalization when a column is numerically dependent."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class FormatError(SchwarzLabError):
    """Malformed binary/text artifact. ``offset`` is the failing byte."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ConfigError(SchwarzLabError):
    pass


class IterationError(SchwarzLabError):
    """Breakdown inside an iterative method, carrying the iterate index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
