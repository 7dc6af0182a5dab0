"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor or parameter dimensions are inconsistent."""


class ContractError(RuntimeError):
    """Raised when a caller violates an operation's precondition."""


class FormatError(ValueError):
    """Raised for corrupt or unsupported checkpoint files."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class GenerationError(ValueError):
    """Raised when a synthetic dataset configuration cannot be realised."""
