"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4. Plain ValueError is used for malformed numeric
inputs to library functions (empty/non-finite/shape mismatch).
"""


class HmdfillError(Exception):
    """Base class for package-specific errors."""


class ConfigError(HmdfillError):
    """Invalid configuration or incompatible layer parameters."""


class DataError(HmdfillError):
    """Dataset, manifest, or on-disk artifact problems."""


class NumericalError(HmdfillError):
    """Non-finite values where finite ones are required (training abort)."""


class CheckpointError(HmdfillError):
    """Unreadable, corrupt, or version-mismatched checkpoint."""


class NoFaceDetected(HmdfillError):
    """Recoverable signal: the landmark provider found no face in a frame."""
