"""Exception types shared across the package."""


class VolumaError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(VolumaError):
    """An operation received a trace or file with no packets."""


class MalformedTrace(VolumaError):
    """Packet records violate ordering or basic sanity constraints."""


class UnsupportedFormat(VolumaError):
    """File does not start with a recognised capture magic."""


class TruncatedFile(VolumaError):
    """A capture record extends past the end of the file.

    The byte offset of the offending record is kept in ``offset``.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ParseError(VolumaError):
    """A text input line could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class InsufficientData(VolumaError):
    """Fewer samples than the operation's stated floor."""


class DomainError(VolumaError):
    """Argument outside the mathematical domain of the operation."""


class DegenerateData(VolumaError):
    """Input has zero variance where a spread is required."""


class FitFailure(VolumaError):
    """A parameter search could not produce a usable estimate."""


class EvaluationError(VolumaError):
    """A model assigned zero density to an observed sample."""


class ShapeError(VolumaError):
    """Mismatched array lengths."""
