"""Exception types shared across the pipeline.

Invalid arguments raise plain ``ValueError``; the classes below mark the
failure categories the command line maps onto distinct exit codes.
"""


class ConfigError(ValueError):
    """An experiment config field is missing or holds a disallowed value."""


class FormatError(ValueError):
    """A binary or WAV file could not be decoded.

    ``offset`` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(RuntimeError):
    """Training or inference produced non-finite values."""


class UndefinedScoreError(ValueError):
    """A separation score has no meaning, e.g. the target projection is zero."""


class DataError(ValueError):
    """Input data is missing or unusable (no tracks, mismatched durations)."""
