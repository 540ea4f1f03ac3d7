"""Exception hierarchy for the engine."""


class CrossmapError(Exception):
    """Base class for all engine errors."""


class RegistrationError(CrossmapError):
    """RGB / xyz / mask rasters do not share dimensions."""


class FormatError(CrossmapError):
    """Malformed binary feature / raster / checkpoint file."""


class EmptyCloudError(CrossmapError):
    """A sample has no valid 3D points."""


class EmptyForegroundError(CrossmapError):
    """Background removal left no foreground points."""


class DegenerateInputError(CrossmapError):
    """Too few points (or collinear points) for a geometric fit."""


class FitFailureError(CrossmapError):
    """RANSAC exhausted its iterations without a valid plane."""


class TrainingError(CrossmapError):
    """Training cannot proceed (e.g. no valid pixels in the dataset)."""


class UndefinedMetricError(CrossmapError):
    """A metric is undefined for the given inputs (e.g. single-class ROC)."""


class ConfigError(CrossmapError):
    """Invalid run configuration."""


class DataError(CrossmapError):
    """Missing or malformed dataset files."""
