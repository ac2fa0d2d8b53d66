class DomainError(ValueError):
    """An argument lies outside the domain where the model is defined."""


class ConfigError(ValueError):
    """A scenario configuration is malformed or has unknown keys."""


class NumericError(ArithmeticError):
    """A numerical routine produced a non-finite value or failed to converge."""


class IdentifiabilityError(NumericError):
    """The data cannot pin down the requested parameters."""
