"""Exception types shared across the package.

Each class carries the process exit code the command-line front end uses
when translating failures, so callers never have to parse messages.
"""


class VolpersError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(VolpersError):
    """Invalid configuration or parameter values."""

    exit_code = 2


class DataError(VolpersError):
    """Malformed, inconsistent, or missing input data."""

    exit_code = 3


class EstimationError(VolpersError):
    """An estimator could not produce a usable result."""

    exit_code = 4
