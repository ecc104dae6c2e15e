"""Exception types shared across the package."""


class DvadError(Exception):
    """Base class for all package errors."""


class AudioError(DvadError):
    """Unreadable, malformed, or unsupported audio input."""


class SceneError(DvadError):
    """Scene synthesis cannot satisfy the requested specification."""


class FeatureError(DvadError):
    """Invalid input to the feature pipeline."""


class EmbeddingError(DvadError):
    """Graph construction or spectral decomposition failed."""


class NetworkError(DvadError):
    """Network evaluation produced invalid values."""


class TrainingError(DvadError):
    """Training diverged or received unusable data."""


class ClassifierError(DvadError):
    """Classifier misuse (mode mismatch, single-class data, degenerate fit)."""


class EvalError(DvadError):
    """Metric computation on unusable inputs."""


class ConfigError(DvadError):
    """Configuration file rejected."""


class BundleError(DvadError):
    """Model bundle file rejected."""
