"""Exception hierarchy.

Every error carries a short machine-readable ``category`` which the CLI
prints verbatim so that scripts can branch on failure kinds.
"""


class ViewStitchError(Exception):
    category = "domain_error"


class ConfigError(ViewStitchError):
    category = "config_error"


class PointAtInfinityError(ViewStitchError):
    category = "point_at_infinity"


class InvalidHomographyError(ViewStitchError):
    category = "invalid_homography"


class InsufficientMatchesError(ViewStitchError):
    category = "insufficient_matches"


class DegenerateConfigurationError(ViewStitchError):
    category = "degenerate_configuration"


class NoUsableClustersError(ViewStitchError):
    category = "no_usable_clusters"


class UnsupportedPoseError(ViewStitchError):
    category = "unsupported_pose"


class NoReferenceError(ViewStitchError):
    category = "no_reference"


class InsufficientCoverageError(ViewStitchError):
    category = "insufficient_coverage"


class ImageTooSmallError(ViewStitchError):
    category = "image_too_small"


class ShapeMismatchError(ViewStitchError, ValueError):
    category = "shape_mismatch"


class DataIOError(ViewStitchError):
    category = "io_error"
