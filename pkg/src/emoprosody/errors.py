"""Exception and warning types shared across the package."""


class EmoProsodyError(Exception):
    """Base class for all package errors."""


class TrackError(EmoProsodyError, ValueError):
    """A prosody track violates its structural invariants."""


class AlignmentError(EmoProsodyError):
    """A scaling plan does not line up with the words of a track."""


class UnsatisfiableTrainingError(EmoProsodyError):
    """A rank model cannot be trained from the data supplied."""


class NumericalError(EmoProsodyError):
    """The optimizer produced a non-finite objective."""


class DimensionError(EmoProsodyError, ValueError):
    pass


class ParseError(EmoProsodyError):
    """No JSON object could be recovered from a model response."""


class SchemaError(EmoProsodyError):
    """A JSON object was found but does not follow the output contract."""


class TransportError(EmoProsodyError):
    """The chat-completion endpoint could not be reached or refused us."""


class UndefinedRateError(EmoProsodyError, ValueError):
    """Error rate requested against an empty reference."""


class ConfigError(EmoProsodyError, ValueError):
    pass


class FormatError(EmoProsodyError, ValueError):
    """A persisted file is malformed or carries the wrong schema version."""


class ProsodyWarning(UserWarning):
    """Out-of-range input was clamped instead of rejected."""
