"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError subtypes
exit 2, ModelError exits 3.
"""


class SonarError(Exception):
    """Base class for all package errors."""


class ConfigError(SonarError):
    """Invalid configuration value or combination."""


class DataError(SonarError):
    """Input data unusable: wrong format, wrong rate, out of range."""


class OrderingError(DataError):
    """Stream input arrived out of frame order."""


class NoSignalError(DataError):
    """Window energy below the noise floor; nothing to estimate."""


class InsufficientDataError(DataError):
    """Not enough samples/time span for the requested analysis."""


class ModelError(SonarError):
    """Model file unreadable, wrong version, or dimensionally inconsistent."""
