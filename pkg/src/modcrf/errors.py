"""Exception hierarchy shared by every module."""


class ModCrfError(Exception):
    """Base class for all package errors."""


class DimensionError(ModCrfError, ValueError):
    pass


class DomainError(ModCrfError, ValueError):
    pass


class UsageError(ModCrfError, RuntimeError):
    pass


class ConfigError(ModCrfError, ValueError):
    pass


class ParseError(ModCrfError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ModCrfError, ValueError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ConsistencyError(ModCrfError, ValueError):
    pass


class CheckpointError(ModCrfError, IOError):
    pass
