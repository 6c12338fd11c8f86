"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class NdscError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(NdscError):
    """Invalid configuration: bad field values, unknown keys, arity mismatches."""


class DataError(NdscError):
    """Malformed or inconsistent data files: bad magic, truncation, dim mismatch."""


class NumericalError(NdscError):
    """Numerical failure during computation, e.g. NaN loss while training."""
