"""Exception types shared across the toolkit."""


class SysidentError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SysidentError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ParameterError(SysidentError, ValueError):
    """An operation was called with an invalid parameter value."""


class ConfigError(SysidentError, ValueError):
    """A model / training / grid configuration is invalid."""


class DataError(SysidentError, ValueError):
    """A dataset or record violates its contract."""


class SchemaError(DataError):
    """A file does not match the declared column / field schema."""


class NumericError(SysidentError, ArithmeticError):
    """A numeric failure (non-finite values, blow-up, divergence)."""


class TrainingDiverged(NumericError):
    """Training loss became non-finite; carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class UnsupportedError(SysidentError, RuntimeError):
    """The requested operation is not defined for this object."""
