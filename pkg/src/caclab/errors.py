"""Exception types raised across the package."""


class CacLabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CacLabError, ValueError):
    pass


class ResourceLimitError(CacLabError):
    pass


class NumericalError(CacLabError, ArithmeticError):
    pass


class TrainingError(CacLabError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(CacLabError, ValueError):
    """Configuration problem, optionally tagged with the offending key and line."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line
