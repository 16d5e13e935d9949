"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and DataError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration or usage."""


class DataError(ValueError):
    """Malformed or non-finite input data."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Incompatible tensor shapes."""


class ContractError(RuntimeError):
    """API misuse such as backward on a non-scalar without a seed gradient."""
