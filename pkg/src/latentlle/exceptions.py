"""Exception hierarchy shared by every module."""


class InvalidInputError(ValueError):
    """Malformed shapes, non-finite values or out-of-range arguments."""


class NotPSDError(InvalidInputError):
    """A matrix expected to be positive semi-definite is not."""


class WrongModeError(InvalidInputError):
    """An operation was called for a prior mode it does not support."""


class ParseError(InvalidInputError):
    """A data file could not be parsed; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, path=None, line=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")
        self.path = path
        self.line = line
        self.column = column


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or an eigensolver failed."""


class DivergedError(NumericalError):
    """EM objective became non-finite; the partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
