"""Exception hierarchy shared by all simit modules."""


class SimitError(Exception):
    """Base class for all simit errors."""


class ConfigError(SimitError, ValueError):
    """Invalid configuration or hyperparameter combination."""


class DataError(SimitError, ValueError):
    """Malformed, missing or inconsistent data."""


class ModelError(SimitError, ValueError):
    """Tensor shapes or arguments incompatible with a network."""


class NumericError(SimitError, ArithmeticError):
    """Non-finite or otherwise ill-defined numeric value."""


class UsageError(SimitError, ValueError):
    """Operation requested in a context that does not support it."""
