"""Exception types shared across the package."""


class ADRDError(Exception):
    """Base class for package errors."""


class DataError(ADRDError):
    """Unreadable or malformed input data (images, config files)."""


class CheckpointFormatError(DataError):
    """Checkpoint file is truncated, has the wrong magic/version, or does not match the network."""


class NumericError(ADRDError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class DegenerateInputError(ADRDError, ValueError):
    """Metric inputs for which the metric is undefined."""
