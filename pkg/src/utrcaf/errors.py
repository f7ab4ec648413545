"""Exception hierarchy shared by all modules."""


class UtrcafError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(UtrcafError, ValueError):
    """A configuration value violates its declared bounds."""


class DimensionError(UtrcafError, ValueError):
    """Array shapes are inconsistent with each other or with the architecture."""


class InvalidParameterError(UtrcafError, ValueError):
    """Model parameters violate an invariant (e.g. a zero-norm classifier row)."""


class LabelError(UtrcafError, ValueError):
    """A class label lies outside ``[0, K)``."""


class EmptyInputError(UtrcafError, ValueError):
    """An aggregation was asked to reduce over zero elements."""


class InputError(UtrcafError, ValueError):
    """Input data is missing something the operation needs (e.g. labels)."""


class ParseError(UtrcafError, ValueError):
    """A data file is malformed. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(UtrcafError, ArithmeticError):
    """Training produced a non-finite loss."""
