"""Exception hierarchy shared by every trackbench module."""


class TrackbenchError(Exception):
    """Base class for all errors raised by trackbench."""


class InputError(TrackbenchError, ValueError):
    """Arguments are empty, mismatched in size, or otherwise unusable."""


class FrameError(TrackbenchError, ValueError):
    """A transform or operation was applied to data in the wrong frame."""


class DegenerateGeometryError(TrackbenchError, ValueError):
    """The point or pose set does not constrain the requested estimate."""


class UnobservableLatencyError(TrackbenchError, ValueError):
    """The streams carry no motion from which a lag can be estimated."""


class InsufficientSignalError(TrackbenchError, ValueError):
    """Too few update knots were detected to estimate a rate."""


class ParseError(TrackbenchError, ValueError):
    """A file row could not be decoded."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(TrackbenchError, ValueError):
    """Decoded data violates a trajectory invariant."""


class ProtocolError(TrackbenchError, ValueError):
    """An OSC packet is malformed."""

    def __init__(self, message, offset):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class CaptureError(TrackbenchError, OSError):
    """The capture service could not start or had to abort."""
