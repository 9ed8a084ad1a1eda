"""Exception types shared across the package."""


class MorphNetError(ValueError):
    """Base class for invalid-input errors raised by morphnet."""


class DimensionError(MorphNetError):
    """Shapes or lengths do not chain."""


class InputError(MorphNetError):
    """Non-finite values or otherwise malformed input."""


class ConfigError(MorphNetError):
    """Invalid hyperparameters or configuration."""


class VerificationError(Exception):
    """A certification or equivalence check failed."""
