"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ForceDecodeError(Exception):
    """Base class for all package errors."""


class ConfigError(ForceDecodeError):
    """Invalid parameters, preconditions, or configuration values."""


class DataError(ForceDecodeError):
    """Malformed, mismatched, or degenerate input data."""


class NumericalError(ForceDecodeError):
    """Numerical failure: singular systems, diverging optimisation, NaN."""
