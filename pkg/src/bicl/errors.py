"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Configuration values are malformed or mutually inconsistent."""


class TopologyError(ValueError):
    """Observation topology parameters are invalid."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition."""


class InsufficientData(RuntimeError):
    """A sampling request asks for more items than are stored."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value where a finite one is required."""
