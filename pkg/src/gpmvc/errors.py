class GPMVCError(Exception):
    """Base class for all errors raised by this package."""


class DatasetError(GPMVCError, ValueError):
    """Malformed dataset, manifest, or mask."""


class ConfigError(GPMVCError, ValueError):
    """Invalid configuration or argument value."""


class ShapeError(GPMVCError, ValueError):
    """Array shape does not match the expected contract."""


class TrainingError(GPMVCError, RuntimeError):
    """A training stage cannot proceed with the given inputs."""
