"""Exception types shared across the package."""


class QvaeError(Exception):
    pass


class ShapeMismatch(QvaeError, ValueError):
    pass


class InvalidGeometry(QvaeError, ValueError):
    pass


class ChannelNotDivisibleBy4(QvaeError, ValueError):
    pass


class NonUnitAxis(QvaeError, ValueError):
    pass


class InsufficientSamples(QvaeError, ValueError):
    pass


class ZeroVariance(QvaeError, ValueError):
    pass


class NonPositiveVariance(QvaeError, ValueError):
    pass


class SingularCovariance(QvaeError, ValueError):
    pass


class NotScalar(QvaeError, ValueError):
    pass


class MissingGradient(QvaeError, RuntimeError):
    pass


class EmptyDataset(QvaeError, ValueError):
    pass


class NoImagesFound(EmptyDataset):
    pass


class ImageTooSmall(QvaeError, ValueError):
    pass


class Divergence(QvaeError, FloatingPointError):
    """Training produced a non-finite loss."""


class CheckpointError(QvaeError, IOError):
    pass
