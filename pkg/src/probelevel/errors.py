"""Exception hierarchy.

Data problems (bad input, missing channels, too few probes) derive from
``DataError``; numerical breakdowns (singular systems, degenerate fits) from
``NumericalError``. The CLI maps the two families to distinct exit codes.
"""


class ProbeLevelError(Exception):
    """Base class for all package errors."""


class DataError(ProbeLevelError, ValueError):
    """Input data is malformed or insufficient for the requested operation."""


class NumericalError(ProbeLevelError, ArithmeticError):
    """A numerical procedure could not produce a usable answer."""


class InsufficientDataError(DataError):
    pass


class DegenerateAbscissaeError(DataError):
    pass


class PositionOutOfBoundsError(DataError, IndexError):
    pass


class MalformedSequenceError(DataError):
    pass


class ChannelMissingError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class InvalidCorrelationError(DataError):
    pass


class DataFormatError(DataError):
    """Malformed text input; message names file, line and column."""

    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}: column {column!r}: {message}")


class NotApplicableError(DataError):
    pass


class SingularDesignError(NumericalError):
    pass


class DegenerateMixtureError(NumericalError):
    pass
