"""Exception hierarchy shared by every symreg module."""


class SymregError(Exception):
    """Base class for all library errors."""


class DimensionError(SymregError, ValueError):
    """Tensor or patch shapes do not agree."""


class ConfigError(SymregError, ValueError):
    """Invalid configuration value."""


class GraphStateError(SymregError, RuntimeError):
    """Backward requested on a graph whose forward cache is gone."""


class NumericError(SymregError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class TrainingError(NumericError):
    """Optimization hit a non-finite gradient or loss."""


class FormatError(SymregError, ValueError):
    """Malformed checkpoint or dataset file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorrelationUndefinedError(SymregError, ValueError):
    """Pearson correlation requested for a zero-variance input."""
