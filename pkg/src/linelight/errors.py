"""Exception types shared across the package."""


class LineLightError(Exception):
    """Base class for all package errors."""


class DimensionError(LineLightError):
    """Tensor shapes disagree with an operation's contract."""


class ConfigurationError(LineLightError):
    """A configuration value violates an invariant."""


class FormatError(LineLightError):
    """A serialized file is corrupt or incompatible."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StreamProtocolError(LineLightError):
    """Rows were fed to a streaming executor out of order."""


class TrainingError(LineLightError):
    """Training hit a non-recoverable numeric problem."""
