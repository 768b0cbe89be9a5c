"""Exception hierarchy shared by every module.

All errors raised by this package derive from :class:`EngineError` so callers
(CLI, service handlers) can catch one base type and map it to exit codes or
wire error codes.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


# --- data validation -------------------------------------------------------

class ChannelMismatch(EngineError):
    pass


class NonFiniteData(EngineError):
    pass


class DimensionMismatch(EngineError):
    pass


class LengthMismatch(EngineError):
    pass


class IndexOutOfRange(EngineError):
    pass


class InvariantViolation(EngineError):
    pass


class EmptyMask(EngineError):
    pass


class EmptyReferenceMask(EmptyMask):
    pass


class EmptyUnion(EngineError):
    pass


class EmptyValidity(EngineError):
    pass


class EmptyList(EngineError):
    pass


class LayoutMismatch(EngineError):
    pass


class NoVisibleKeypoints(EngineError):
    pass


class OverlappingTargetMasks(EngineError):
    pass


class InvalidConfig(EngineError):
    pass


# --- file formats ----------------------------------------------------------

class ParseError(EngineError):
    pass


class BadMagic(ParseError):
    pass


class TruncatedPayload(ParseError):
    pass


class UnsupportedDtype(ParseError):
    pass


# --- service ---------------------------------------------------------------

class UnknownSession(EngineError):
    pass


class MissingReference(EngineError):
    pass


class NoReadoutRecorded(EngineError):
    pass


class ProtocolError(EngineError):
    """Malformed frame or payload on the wire."""


class RemoteEngineError(EngineError):
    """An ERROR frame received from the server, carrying its diagnostic code."""

    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code}: {message}")
        self.code = code
        self.message = message
