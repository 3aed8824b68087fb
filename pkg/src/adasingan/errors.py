"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input has the wrong shape, range or size for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or out of range."""


class ConfigMismatchError(ConfigError):
    """A checkpoint was trained with settings incompatible with the request."""


class NumericError(ArithmeticError):
    """A loss or intermediate quantity became non-finite."""
