"""Exception types shared across the package."""


class MiraError(Exception):
    """Base class for every error raised by miraplr."""


class ParseError(MiraError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MiraError, ValueError):
    """Input violates a documented invariant (e.g. a non-positive error bar)."""


class DomainError(MiraError, ValueError):
    """Argument outside the domain of an operation."""


class NumericalError(MiraError, ArithmeticError):
    """A factorization or normalization failed on otherwise valid input."""
