"""Exception types shared across the package."""


class LoTeNetError(Exception):
    """Base class for all errors raised by lotenet."""


class ShapeError(LoTeNetError, ValueError):
    """Tensor extents or ranks do not fit an operation."""


class UsageError(LoTeNetError, RuntimeError):
    """An API was called in a state or with arguments it does not support."""


class ConfigError(LoTeNetError, ValueError):
    """A model or run configuration is invalid."""


class DataError(LoTeNetError):
    """A dataset could not be loaded or is unusable."""


class FormatError(DataError):
    """A binary file does not follow the expected layout."""


class MetricError(LoTeNetError, ValueError):
    """A metric is undefined for the given inputs."""
