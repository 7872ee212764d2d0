"""
PruneGNN — Errors
Exception hierarchy shared by every engine module.
"""


class PruneGnnError(Exception):
    """Base class for all engine errors."""


class DomainError(PruneGnnError, ValueError):
    """Parameters outside the model's domain (α ≤ 2, t < d0, ratio ≥ 1, ...)."""


class ConvergenceError(PruneGnnError, ArithmeticError):
    """A numeric scheme or solver hit its iteration cap."""


class DatasetSchemaError(PruneGnnError):
    """A dataset or model file is corrupt or has an unknown schema version."""


class DimensionError(PruneGnnError, ValueError):
    """Array shapes do not agree."""


class TrainingDivergedError(PruneGnnError):
    """Loss or parameters became NaN/Inf during training."""


class StaleModelError(PruneGnnError):
    """Model feature layout or normalization statistics do not match the data."""


class PowerConstraintError(PruneGnnError, ValueError):
    """A power vector violates 0 <= p <= P_max."""


class ZeroBaselineError(PruneGnnError, ZeroDivisionError):
    """Normalizing by a baseline whose mean sum rate is zero."""


class ConfigError(PruneGnnError, ValueError):
    """Experiment configuration failed validation."""
