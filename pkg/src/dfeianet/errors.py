"""Exception hierarchy shared by the library and the CLI."""


class DfeError(Exception):
    """Base class for every error raised by dfeianet."""


class ConfigurationError(DfeError, ValueError):
    """A shape, hyperparameter, or architecture constraint was violated."""


class UsageError(DfeError, RuntimeError):
    """An API was called in a way its contract forbids."""


class IngestionError(DfeError, OSError):
    """A dataset or image could not be read."""


class WeightFileError(DfeError):
    """Base class for weight-file load failures."""


class UnexpectedEOFError(WeightFileError):
    def __init__(self, detail: str = ""):
        msg = "unexpected end of file"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class UnknownParameterError(WeightFileError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown parameter name: {name!r}")


class ShapeMismatchError(WeightFileError):
    def __init__(self, name: str, expected, got):
        self.name = name
        super().__init__(
            f"shape mismatch for {name!r}: expected {tuple(expected)}, file has {tuple(got)}"
        )


class MissingParameterError(WeightFileError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__("weight file is missing parameters: " + ", ".join(self.names))
