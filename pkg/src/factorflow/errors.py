"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config problems -> 1,
data/file problems -> 2, numerical failures -> 3.
"""


class FlowError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowError):
    """Operand shapes are incompatible with the requested operation."""


class NumericsError(FlowError):
    """A numerical invariant was violated (non-finite values, bad domain)."""


class DataError(FlowError):
    """A dataset, image file, or checkpoint is missing or malformed."""


class ConfigError(FlowError):
    """A configuration value is invalid or inconsistent."""
