"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ConfigurationError(ValueError):
    """A configuration value or call arrangement is not allowed."""


class ContractError(RuntimeError):
    """A caller broke a documented precondition."""


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    pass


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or from another format version."""
