"""Exception hierarchy shared by every module."""


class WaferSSLError(Exception):
    """Base class for all errors raised by this project."""


class DatasetIOError(WaferSSLError, OSError):
    """A dataset or checkpoint path could not be read or written."""


class FormatError(WaferSSLError, ValueError):
    """A dataset file line could not be parsed."""

    def __init__(self, message: str, line_number: int = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class InvalidWafer(WaferSSLError, ValueError):
    pass


class BadDimensions(WaferSSLError, ValueError):
    pass


class UnlabeledInput(WaferSSLError, ValueError):
    pass


class TooFewSamples(WaferSSLError, ValueError):
    pass


class BadK(WaferSSLError, ValueError):
    pass


class TargetTooLarge(WaferSSLError, ValueError):
    pass


class ShapeMismatch(WaferSSLError, ValueError):
    pass


class NonFiniteGradient(WaferSSLError, ArithmeticError):
    pass


class NonFinite(WaferSSLError, ArithmeticError):
    pass


class BadLabel(WaferSSLError, ValueError):
    pass


class ZeroNorm(WaferSSLError, ArithmeticError):
    pass


class BatchTooSmall(WaferSSLError, ValueError):
    pass


class EmptyLabeledSet(WaferSSLError, ValueError):
    pass


class ConfigInvalid(WaferSSLError, ValueError):
    pass


class LengthMismatch(WaferSSLError, ValueError):
    pass


class EmptyMatrix(WaferSSLError, ValueError):
    pass
