"""Exception hierarchy shared across the engine."""


class PointVosError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(PointVosError):
    """A caller violated an operation precondition."""


class EmptyMaskError(InvalidInputError):
    """An operation that needs mask pixels received an empty mask."""


class InvalidDatasetError(PointVosError):
    """A dataset directory or annotation file is malformed."""


class TransportError(PointVosError):
    """The byte stream to a backend broke or carried unreadable framing."""


class ProtocolError(PointVosError):
    """A well-framed message violated the backend protocol contract."""


class UnsupportedCapabilityError(ProtocolError):
    """A backend was asked for an operation it does not advertise."""


class NotFoundError(PointVosError):
    """A referenced entity (session, point, frame) does not exist."""
