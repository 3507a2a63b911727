"""Exception hierarchy shared across the package."""


class HolotileError(Exception):
    """Base class for all errors raised by holotile."""


class DimensionError(HolotileError, ValueError):
    """Array shapes or grid sizes are inconsistent with the operation."""


class DomainError(HolotileError, ValueError):
    """A value lies outside the physically or mathematically valid domain."""


class ConfigurationError(HolotileError, ValueError):
    """Configuration values are invalid or mutually inconsistent."""


class GridTooLargeError(HolotileError, ValueError):
    """A brute-force oracle refused to run on a grid above its size guard."""


class UsageError(HolotileError, ValueError):
    """An API was called in a way its contract does not allow."""


class DataFileError(HolotileError):
    """An input or output data file is unreadable or unsupported."""
