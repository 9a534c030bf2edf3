"""Exception hierarchy shared by all modules."""


class IrisError(Exception):
    """Base class for validation-type failures raised by this package."""


class PayloadLengthMismatch(IrisError):
    pass


class TruncatedPacket(IrisError):
    pass


class BadDimensions(IrisError):
    pass


class LowConfidence(IrisError):
    """Accelerometer magnitude too small for a trustworthy tilt estimate."""


class ShapeMismatch(IrisError):
    pass


class DegenerateEmbedding(IrisError):
    pass


class EmptyDatabase(IrisError):
    pass


class UnknownDevice(IrisError):
    pass


class NoPendingQuery(IrisError):
    pass


class NothingToUndo(IrisError):
    pass


class CapabilityMismatch(IrisError):
    pass


class TransportFailure(IrisError):
    pass


class InvalidGestureRate(IrisError):
    pass


class FormatError(IrisError):
    """A file did not match its expected on-disk format."""
