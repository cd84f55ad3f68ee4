"""Exception taxonomy shared by all modules.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class TripflowError(Exception):
    """Base class for all tripflow errors."""


class ConfigError(TripflowError):
    """Bad usage or configuration: missing files, out-of-range parameters."""


class DataError(TripflowError):
    """Invalid input data: parse failures, dangling references, bad values."""


class NoPathError(DataError):
    """No route exists between an origin and a destination zone."""


class NumericalError(TripflowError):
    """A numerical routine failed to produce a usable result."""
