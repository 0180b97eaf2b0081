"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed argument: wrong dimension, bad index, inconsistent shapes."""


class ConfigError(ValueError):
    """Invalid configuration or a generation budget that cannot be met."""


class ClutteredError(RuntimeError):
    """Rejection sampling could not find enough collision-free states."""
