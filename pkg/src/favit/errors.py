"""Exception types shared across the package.

Each error class maps to one CLI exit code so failures stay
distinguishable at the shell: config 2, data 3, numeric 4,
acceptance 5.
"""


class FavitError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FavitError):
    """Bad configuration: unknown key, wrong type, out-of-range value."""

    exit_code = 2


class DataError(FavitError):
    """Malformed input data: truncated file, bad magic, shape mismatch."""

    exit_code = 3


class NumericError(FavitError):
    """Non-finite value or numerically unusable quantity."""

    exit_code = 4


class AcceptanceError(FavitError):
    """An acceptance-style gate (tolerance, invariant) failed."""

    exit_code = 5
