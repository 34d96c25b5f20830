"""Exception types shared across the package.

Exit-code mapping used by the CLI: usage errors -> 1, ConfigError -> 2,
NumericalError / ContainerError / ValueError -> 3.
"""


class ConfigError(ValueError):
    """A configuration contract was violated (bad key, bad shape, bad hyperparameter)."""


class NumericalError(ArithmeticError):
    """Non-finite values where finite ones are required. Carries the offending path."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{message} (at {path!r})")
        self.path = path


class ContainerError(ValueError):
    """Malformed tensor-container file. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
