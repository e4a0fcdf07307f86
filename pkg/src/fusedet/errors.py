"""Exception hierarchy shared across the package."""


class FusedetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FusedetError):
    """A configuration value or file is invalid or inconsistent."""


class DataError(FusedetError):
    """Input data is malformed, out of range, or unreadable."""


class BehindCameraError(FusedetError):
    """A point or box lies at non-positive camera depth and cannot be projected."""


class DegenerateBoxError(FusedetError):
    """A box has no area after clamping to the image bounds."""


class NumericError(FusedetError):
    """A numerical operation failed (singular matrix, NaN, divergence)."""


class TrainingError(FusedetError):
    """Training could not proceed (empty sample set, divergent loss)."""
