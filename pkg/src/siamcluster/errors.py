"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI reports it in its
machine-readable failure line.
"""


class SiamClusterError(Exception):
    category = "error"


class DataError(SiamClusterError):
    category = "data"


class DimensionMismatchError(DataError):
    category = "dimension_mismatch"


class UnknownTrackError(DataError):
    """A frame references a track_id that the track metadata does not define."""

    category = "unknown_track"


class ReferentialIntegrityError(DataError):
    """A track lists a frame that is missing or belongs to another track."""

    category = "referential_integrity"


class EmptyTrackError(DataError):
    category = "empty_track"


class NonFiniteValueError(DataError):
    category = "non_finite"


class FormatError(DataError):
    category = "format"


class DegenerateVectorError(SiamClusterError):
    category = "degenerate_vector"


class GenerationError(SiamClusterError):
    category = "generation"


class ConfigurationError(SiamClusterError):
    category = "configuration"


class MiningError(SiamClusterError):
    category = "mining"


class TrainingError(SiamClusterError):
    category = "training"


class EvaluationError(SiamClusterError):
    category = "evaluation"
