"""Exception hierarchy shared by every layer."""


class GLCkptError(Exception):
    pass


# driver (lower half)


class DriverError(GLCkptError):
    pass


class DriverDestroyed(DriverError):
    pass


class UnknownContext(DriverError):
    pass


class UnknownKind(DriverError):
    pass


class UnknownId(DriverError):
    pass


class UnknownKey(DriverError):
    pass


class BadValue(DriverError):
    pass


# id virtualization


class StaleVirtualId(GLCkptError):
    pass


class UnknownVirtual(GLCkptError):
    pass


class RealIdCollision(GLCkptError):
    pass


# call log


class SequenceGap(GLCkptError):
    pass


class ReplayDivergence(GLCkptError):
    pass


class LogFormatError(GLCkptError):
    pass


class BadMagic(LogFormatError):
    pass


class BadVersion(LogFormatError):
    pass


class TruncatedLog(LogFormatError):
    pass


class ChecksumMismatch(LogFormatError):
    pass


class MalformedRecord(LogFormatError):
    pass


# split process


class DuplicateLabel(GLCkptError):
    pass


class AlreadyPaired(GLCkptError):
    pass


class SessionNotLive(GLCkptError):
    pass


class SessionBusy(GLCkptError):
    """A checkpoint or restore raced with another operation on the session."""


class ImageCorrupt(GLCkptError):
    pass


# display server


class DisplayError(GLCkptError):
    pass


class DisplayUnavailable(DisplayError):
    pass


class NotConnected(DisplayError):
    pass


class UnknownWindow(DisplayError):
    pass


class DimensionMismatch(DisplayError):
    pass
