"""Exception hierarchy shared by every mgcap module."""


class MgcapError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MgcapError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonConvergence(MgcapError, ArithmeticError):
    """The Jacobi solver ran out of sweeps before the off-diagonal mass vanished."""


class NotSymmetric(MgcapError, ValueError):
    pass


class NonFinite(MgcapError, ValueError):
    pass


# data
class MalformedHeader(MgcapError, ValueError):
    pass


class UnexpectedEof(MgcapError, EOFError):
    pass


class UnsupportedMaxval(MgcapError, ValueError):
    pass


class CropOutOfBounds(MgcapError, ValueError):
    pass


class RatioOutOfRange(MgcapError, ValueError):
    pass


class EmptyDataset(MgcapError, ValueError):
    pass


# cli
class ConfigError(MgcapError, ValueError):
    pass


class CheckpointError(MgcapError, ValueError):
    pass
