"""Exception types shared across the toolkit."""


class TrackingError(Exception):
    """Base class for all toolkit-specific failures."""


class PoseFailureError(TrackingError):
    """Pose fitting could not produce a valid 7-DoF pose (too few or too
    inconsistent correspondences). Callers mark the detection pose-less."""


class DegenerateGeometryError(TrackingError):
    """Input geometry is rank-deficient (coincident or collinear points)."""


class UndefinedMetricError(TrackingError):
    """A metric is undefined for the given counts (e.g. no ground truth)."""
