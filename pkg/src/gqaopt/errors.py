"""Exception types raised across the package."""


class GQAOptError(ValueError):
    """Base class for all errors raised by gqaopt."""


class DegenerateDataError(GQAOptError):
    """Records cannot identify the requested curve (too few points, no spread, no trend)."""


class InfeasibleTargetError(GQAOptError):
    """Target loss is at or below the asymptote of a curve."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class AllInfeasibleError(InfeasibleTargetError):
    """No candidate curve can reach the target loss."""


class OutOfRangeError(GQAOptError):
    """Requested model size lies outside the supported range of a family table."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class RecordFormatError(GQAOptError):
    """A tabular input file is malformed."""
