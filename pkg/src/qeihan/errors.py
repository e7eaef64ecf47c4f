"""Exception types raised across the simulator."""


class QeihanError(Exception):
    """Base class for all simulator errors."""


class ParseError(QeihanError, ValueError):
    pass


class ShapeError(QeihanError, ValueError):
    pass


class MissingTensor(QeihanError, FileNotFoundError):
    pass


class DimsMismatch(QeihanError, ValueError):
    pass


class NonFiniteValue(QeihanError, ValueError):
    pass


class EmptyDistribution(QeihanError, ValueError):
    pass


class ZeroOrSubnormal(QeihanError, ValueError):
    """A zero/subnormal half reached the comparator path without being flushed."""


class EmptyHistogram(QeihanError, ValueError):
    pass


class CapacityExceeded(QeihanError):
    pass


class UnknownGroup(QeihanError, KeyError):
    pass


class SliceLengthMismatch(QeihanError, ValueError):
    pass


class UnknownTableId(QeihanError, KeyError):
    pass


class Unpartitionable(QeihanError):
    pass


class MismatchedRuns(QeihanError, ValueError):
    pass


class BufferOverflow(QeihanError):
    pass
