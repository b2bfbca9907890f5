"""Exception hierarchy shared by every camnet module."""


class CamnetError(Exception):
    """Base class for all errors raised by camnet."""


class DimensionError(CamnetError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(CamnetError, FloatingPointError):
    """A tensor holds NaN or Inf."""


class ContractError(CamnetError, ValueError):
    """A precondition of an operation was violated."""


class ParseError(CamnetError, ValueError):
    def __init__(self, index: int, token: str, reason: str = "malformed token"):
        self.index = index
        self.token = token
        super().__init__(f"{reason} at token {index}: {token!r}")


class FormatError(CamnetError, ValueError):
    """A file does not follow the expected binary layout."""


class ConsistencyError(CamnetError, ValueError):
    """Two related inputs disagree (e.g. image and label counts)."""


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


class DivergenceError(CamnetError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics
