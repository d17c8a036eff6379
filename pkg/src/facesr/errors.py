"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems -> 1,
numeric failures -> 2, file/format problems -> 3.
"""


class ShapeError(ValueError):
    """Array shapes or extents do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(ValueError):
    """An API was called in a way its contract forbids."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or failed numerically."""


class FormatError(ValueError):
    """A file on disk is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(ValueError):
    """A checkpoint is incompatible with the current model or corrupt."""
