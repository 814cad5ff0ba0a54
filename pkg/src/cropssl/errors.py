"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the taxonomy small:
configuration problems, malformed input data, and numerical blow-ups.
"""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class DataFormatError(ValueError):
    """An input file does not match the expected schema."""


class NumericalError(ArithmeticError):
    """A computation produced NaN or Inf where finite values are required."""
