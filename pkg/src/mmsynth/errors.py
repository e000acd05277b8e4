"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class MMSynthError(Exception):
    """Base class for package errors."""


class ConfigError(MMSynthError):
    """Invalid configuration or usage."""


class DataError(MMSynthError):
    """Malformed, missing, or inconsistent input data."""


class NumericalError(MMSynthError):
    """Non-finite values where finite numbers are required."""
