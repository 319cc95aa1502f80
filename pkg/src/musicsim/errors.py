"""Exception hierarchy. Every error carries the name of the module that raised it."""

from __future__ import annotations


class MusicSimError(Exception):
    module = "musicsim"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


# midi_ingest
class MidiError(MusicSimError):
    module = "midi"


class MalformedHeader(MidiError):
    pass


class UnsupportedDivision(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class BadField(MidiError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ManifestError(MidiError):
    pass


class PieceLoadError(MidiError):
    def __init__(self, piece_id: str, cause: Exception):
        super().__init__(f"piece {piece_id!r}: {cause}")
        self.piece_id = piece_id
        self.cause = cause


# tokenizer_vocab
class TokenizerError(MusicSimError):
    module = "tokenizer"


class TargetTooSmall(TokenizerError):
    pass


class IncompatibleVocabulary(TokenizerError):
    pass


class UnknownId(TokenizerError):
    pass


# embedding_provider
class ModelError(MusicSimError):
    module = "model"


class SequenceTooLong(ModelError):
    pass


class IdOutOfRange(ModelError):
    pass


class BadMagic(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class TruncatedPayload(ModelError):
    pass


# calibration
class CalibrationError(MusicSimError):
    module = "calibration"


class EmptySequence(CalibrationError):
    pass


class LayerOutOfRange(CalibrationError):
    pass


class TooFewEmbeddings(CalibrationError):
    pass


class DimensionMismatch(CalibrationError):
    pass


class MissingStats(CalibrationError):
    pass


class MissingDirections(CalibrationError):
    pass


class InvalidConfig(CalibrationError):
    pass


# pair_corpus
class PairError(MusicSimError):
    module = "pairs"


class InsufficientPairs(PairError):
    pass


# evaluation
class EvaluationError(MusicSimError):
    module = "evaluation"


class LengthMismatch(EvaluationError):
    pass


class TooShort(EvaluationError):
    pass


class ConstantInput(EvaluationError):
    pass


class MissingEmbedding(EvaluationError):
    pass


class EmptyResults(EvaluationError):
    pass


class IoFailure(EvaluationError):
    pass


# cli
class ConfigError(MusicSimError):
    module = "config"


# warnings
class RankTooLow(UserWarning):
    """Fewer principal directions are available than were requested."""


class ZeroVectorWarning(UserWarning):
    pass
