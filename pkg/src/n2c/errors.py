"""Exception hierarchy shared across the package.

Every error carries the process exit code the CLI maps it to:
2 for configuration/contract problems, 3 for unusable data or files,
4 for numerical failures (NaN losses, divergence, gradient blowups).
"""


class N2CError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(N2CError):
    """A config value violates its documented bounds, or a key is unknown/missing."""

    exit_code = 2


class ContractError(N2CError):
    """API misuse: shape mismatches, frozen-parameter updates, stale intermediates."""

    exit_code = 2


class DataError(N2CError):
    """Input data cannot be used (non-finite values, missing contrast, orphan files)."""

    exit_code = 3


class ImageFormatError(DataError):
    """Image file has a bad magic string or a malformed header."""


class ImageTruncatedError(DataError):
    """Image payload does not match the dimensions advertised by the header."""


class ModelFormatError(DataError):
    """Model file is corrupt or has a bad magic string."""


class ModelVersionError(DataError):
    """Model file declares a format version this build does not understand."""


class NumericalError(N2CError):
    """A computation produced non-finite values."""

    exit_code = 4
