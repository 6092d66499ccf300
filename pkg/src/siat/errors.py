"""Exception hierarchy shared across the stack.

Every error carries a stable ``code`` (its class name) so the HTTP gateway
and CLI can report machine-readable failures without coupling to messages.
"""

from __future__ import annotations


class SiatError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# --- broker ---------------------------------------------------------------

class DuplicateTopic(SiatError):
    pass


class InvalidName(SiatError):
    pass


class UnknownTopic(SiatError):
    pass


class OffsetOutOfRange(SiatError):
    pass


# --- wire codec -----------------------------------------------------------

class TooManyFrames(SiatError):
    pass


class MixedFrameShapes(SiatError):
    pass


class DecodeError(SiatError):
    """Base class for all mini-batch decode failures."""


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class CrcMismatch(DecodeError):
    pass


class SizeMismatch(DecodeError):
    pass


# --- acquisition ----------------------------------------------------------

class UnknownKind(SiatError):
    pass


class BadParams(SiatError):
    pass


class MissingPath(SiatError):
    pass


class SourceError(SiatError):
    pass


class InvalidRecord(SiatError):
    pass


# --- catalog / userspace --------------------------------------------------

class AccessDenied(SiatError):
    pass


class DuplicateName(SiatError):
    pass


class BadSpec(SiatError):
    pass


class KindMismatch(SiatError):
    pass


class UnknownImplementation(SiatError):
    pass


class UnknownAlgorithm(SiatError):
    pass


class UnknownSource(SiatError):
    pass


class UnknownService(SiatError):
    pass


class UnknownUser(SiatError):
    pass


class PipelineTypeError(SiatError):
    pass


class EntityInUse(SiatError):
    """Deletion rejected because other entities still reference the target."""


class AlreadyExists(SiatError):
    pass


class BadPath(SiatError):
    pass


class NotFound(SiatError):
    pass


# --- processing / mining --------------------------------------------------

class BadPolicy(SiatError):
    pass


class BadBins(SiatError):
    pass


class TooFewFrames(SiatError):
    pass


class TooFewPoints(SiatError):
    pass


class BadK(SiatError):
    pass


class DidNotConverge(SiatError):
    pass


class DimMismatch(SiatError):
    pass


class SingularMatrix(SiatError):
    pass


class ShapeMismatch(SiatError):
    pass


# --- runtime ----------------------------------------------------------------

class MissingModel(SiatError):
    pass


class BadParam(SiatError):
    pass


class NoSubscription(SiatError):
    pass


class StageError(SiatError):
    """Failure inside one pipeline stage, with the stage index attached."""

    def __init__(self, stage_index: int, stage_name: str, cause: Exception):
        super().__init__(f"stage {stage_index} ({stage_name}): {cause}")
        self.stage_index = stage_index
        self.stage_name = stage_name
        self.cause = cause


# --- knowledge --------------------------------------------------------------

class NoRule(SiatError):
    pass


class QuerySyntaxError(SiatError):
    """Query text rejected; carries the offset and what was expected there."""

    def __init__(self, position: int, expected: str):
        super().__init__(f"at offset {position}: expected {expected}")
        self.position = position
        self.expected = expected


# --- gateway ----------------------------------------------------------------

class PortInUse(SiatError):
    pass


class DataDirError(SiatError):
    pass


class BadToken(SiatError):
    pass
