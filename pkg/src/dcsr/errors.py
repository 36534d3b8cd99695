"""Exception hierarchy shared by every dcsr module."""


class DCSRError(Exception):
    """Base class for all errors raised by this package."""


class EmptyText(DCSRError, ValueError):
    pass


class ParseError(DCSRError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(DCSRError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DimensionError(DCSRError, ValueError):
    pass


class NumericalError(DCSRError, ArithmeticError):
    pass


class IncompatibleCheckpoint(DCSRError):
    pass


class InsufficientNegatives(DCSRError):
    pass


class EmptyPool(DCSRError, ValueError):
    pass


class IndexFormatError(DCSRError):
    pass


class RangeError(DCSRError, ValueError):
    pass


class SpecError(DCSRError, ValueError):
    pass
