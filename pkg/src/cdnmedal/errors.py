class CdnMedalError(Exception):
    """Base class for all package errors."""


class ConfigError(CdnMedalError, ValueError):
    """Invalid configuration or incompatible layer shapes."""


class UsageError(CdnMedalError, ValueError):
    """A function was called with arguments that violate its contract."""


class FormatError(CdnMedalError, ValueError):
    """A file could not be decoded. ``offset`` is the byte position, when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(CdnMedalError):
    """Dataset files are missing, out of order, or hold unexpected values."""


class TrainingError(CdnMedalError, FloatingPointError):
    """A non-finite loss or gradient was produced during training."""
