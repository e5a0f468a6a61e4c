"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """A caller-supplied value violates an operation's preconditions."""


class CorruptWeightsError(RuntimeError):
    """A weight file is truncated, shape-inconsistent, or non-finite."""


class UnsupportedVersionError(RuntimeError):
    """A file declares a format version this build cannot read."""


class DataFormatError(ValueError):
    """A data file (trajectory, library, manifest) failed validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
