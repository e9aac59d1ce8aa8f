"""Exception types shared across the package."""


class DarcyChannelError(Exception):
    """Base class for all package errors."""


class DomainError(DarcyChannelError):
    """A point was queried outside the domain it belongs to."""


class InvalidChartError(DarcyChannelError):
    """The interface chart violates its admissibility requirements."""


class ParameterError(DarcyChannelError):
    """A scalar parameter is outside its admissible range."""


class StructuralError(DarcyChannelError):
    """Objects that must share a mesh/space/shape do not."""


class SizeError(DarcyChannelError):
    """A desk-scale size limit was exceeded."""


class SingularSystemError(DarcyChannelError):
    """Direct factorization hit a zero pivot.

    Carries a hint about which block is the likely culprit (missing
    pressure pinning, broken coupling).
    """

    def __init__(self, message, block_hint=None):
        super().__init__(message)
        self.block_hint = block_hint


class ConditioningError(DarcyChannelError):
    """The factorization's pivot growth check failed at small epsilon."""


class ConfigError(DarcyChannelError):
    """A run configuration is invalid; names the offending key."""

    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class ExpressionError(ConfigError):
    """An expression string does not belong to the supported grammar."""

    def __init__(self, key, message):
        super().__init__(key, message)
