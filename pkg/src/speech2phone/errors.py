"""Exception hierarchy shared by every stage of the pipeline."""


class Speech2PhoneError(Exception):
    """Base class for all domain errors raised by this package."""


class DimensionMismatch(Speech2PhoneError, ValueError):
    pass


# audio
class MalformedContainer(Speech2PhoneError):
    pass


class UnsupportedEncoding(Speech2PhoneError):
    pass


class EmptyAudio(Speech2PhoneError):
    pass


class ChannelMismatch(Speech2PhoneError, ValueError):
    pass


# features
class EmptySignal(Speech2PhoneError, ValueError):
    pass


class TooShort(Speech2PhoneError, ValueError):
    pass


# dataset
class ParseError(Speech2PhoneError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingAnchor(Speech2PhoneError):
    def __init__(self, speaker_id):
        self.speaker_id = speaker_id
        super().__init__(f"speaker {speaker_id!r} has reading entries but no anchor entry")


class InsufficientInstances(Speech2PhoneError):
    pass


class SingleSpeaker(Speech2PhoneError):
    pass


# nn
class IndexOutOfRange(Speech2PhoneError, IndexError):
    pass


class CacheMismatch(Speech2PhoneError):
    pass


class ShapeMismatch(Speech2PhoneError, ValueError):
    pass


class EmptyDataset(Speech2PhoneError):
    pass


class DivergedLoss(Speech2PhoneError, FloatingPointError):
    pass


class BadDimensions(Speech2PhoneError, ValueError):
    pass


# models / persistence
class BadSpeakerCount(Speech2PhoneError, ValueError):
    pass


class WrongKind(Speech2PhoneError):
    pass


class MalformedFile(Speech2PhoneError):
    pass


class VersionMismatch(MalformedFile):
    pass


class ChecksumMismatch(Speech2PhoneError):
    pass


class CorruptedFile(MalformedFile, ChecksumMismatch):
    """Stored CRC-32 does not match the file body (bit rot, truncation, tampering)."""


# gmm
class TooFewPoints(Speech2PhoneError):
    pass


class DegenerateData(Speech2PhoneError):
    pass


class NoModels(Speech2PhoneError):
    pass


# identify / eval
class EmptyEnrollment(Speech2PhoneError):
    pass


class EmptyDatabase(Speech2PhoneError):
    pass


class ConstantTarget(Speech2PhoneError, ValueError):
    pass


class UnknownLabel(Speech2PhoneError):
    pass


class PoolTooSmall(Speech2PhoneError):
    pass


class DegenerateEmbedderWarning(UserWarning):
    """All embeddings collapsed onto one point; accuracy reflects tie-breaking only."""


class EmbedderMismatchWarning(UserWarning):
    """An embedding database was opened against a different embedder model."""
