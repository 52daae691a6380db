"""Affect-tagged experience replay with dream-queue replay and prune-bin deletion."""

from cosmocore.core import (
    AffectTag,
    BufferEntry,
    ExperimentConfig,
    FeedbackKind,
    Trajectory,
    ValidationError,
    compute_priority,
    desk_config,
    make_rng,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "AffectTag",
    "BufferEntry",
    "ExperimentConfig",
    "FeedbackKind",
    "Trajectory",
    "ValidationError",
    "compute_priority",
    "desk_config",
    "make_rng",
    "validate_config",
]
