"""Exception types shared across the package."""


class FusionError(Exception):
    """Base class for all package errors."""


class DimensionError(FusionError, ValueError):
    """Operand shapes are inconsistent."""


class ParameterError(FusionError, ValueError):
    """A numeric hyperparameter is outside its valid range."""


class ConfigurationError(FusionError):
    """Configuration values are invalid or incompatible with stored state."""


class IntegrityError(FusionError):
    """A serialized file is truncated or corrupt."""


class OracleError(FusionError):
    """A verification oracle could not be evaluated."""


class InputError(FusionError):
    """User-supplied data is unusable."""
