"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """Invalid shape, range or value passed to an operation."""


class NumericError(FloatingPointError):
    """Non-finite values where finite ones are required."""


class ConfigurationError(ValueError):
    """Inconsistent topology, loss or run configuration."""


class FormatError(ValueError):
    """Malformed or incomplete on-disk artifact."""


class VersionError(FormatError):
    """On-disk artifact written by an incompatible format version."""
