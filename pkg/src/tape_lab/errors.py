"""Exception types shared across the package.

Every error raised by the library derives from :class:`TapeLabError` so
callers (and the CLI) can distinguish our failures from genuine bugs.
"""


class TapeLabError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(TapeLabError, ValueError):
    """A caller-supplied argument is out of range or inconsistent."""


class InvalidDataError(TapeLabError, ValueError):
    """Input data violates a documented precondition (non-finite, empty, ...)."""


class DegenerateInputError(InvalidDataError):
    """Input is structurally valid but carries no usable signal (e.g. constant)."""


class DegenerateTargetError(InvalidDataError):
    """A loss target has zero norm, so a relative error is undefined."""


class ParseError(InvalidDataError):
    """A file could not be parsed.  Carries 1-based row/column location."""

    def __init__(self, message, row=None, column=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.row = row
        self.column = column


class ResourceLimitError(TapeLabError, RuntimeError):
    """A requested computation would exceed a configured resource budget."""


class NumericError(TapeLabError, ArithmeticError):
    """A numeric computation produced a non-finite value."""


class TerminalState(Exception):
    """Raised by the compaction automaton when no eligible air cell remains.

    Not an error: signals normal termination of the densification process.
    Carries ``n_c``, the number of cells that were in contact with the plate
    when the step was refused.
    """

    def __init__(self, n_c):
        super().__init__(f"automaton terminal: {n_c} contact cells exceed available air")
        self.n_c = n_c
