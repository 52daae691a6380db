"""Shared domain types and the experiment configuration."""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

FEATURE_DIM = 512


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class FeedbackKind(str, enum.Enum):
    PASS = "pass"
    SYNTAX_ERROR = "syntax_error"
    SEMANTIC_ERROR = "semantic_error"
    RUNTIME_ERROR = "runtime_error"

    @property
    def is_failure(self) -> bool:
        return self is not FeedbackKind.PASS


Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Return a PCG64-backed generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def _check_finite(name: str, *values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise ValidationError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class AffectTag:
    valence: float
    arousal: float

    def __post_init__(self) -> None:
        _check_finite("affect tag", self.valence, self.arousal)
        if not -1.0 <= self.valence <= 1.0:
            raise ValidationError(f"valence {self.valence} outside [-1, 1]")
        if not 0.0 <= self.arousal <= 1.0:
            raise ValidationError(f"arousal {self.arousal} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One generation episode.

    ``task_id`` names the task context the program was generated for; the
    learner needs it to map a replayed entry back onto its own policy.
    """

    prompt_features: np.ndarray
    generated_program: Any
    execution_feedback: FeedbackKind
    reward: float
    task_id: str = ""
    feedback_detail: str = ""

    def __post_init__(self) -> None:
        feats = np.asarray(self.prompt_features, dtype=np.float64)
        if feats.ndim != 1 or feats.shape[0] != FEATURE_DIM:
            raise ValidationError(
                f"prompt_features must have shape ({FEATURE_DIM},), got {feats.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValidationError("prompt_features must be finite")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "prompt_features", feats)
        object.__setattr__(self, "execution_feedback", FeedbackKind(self.execution_feedback))
        _check_finite("reward", self.reward)
        if not -1.0 <= self.reward <= 1.0:
            raise ValidationError(f"reward {self.reward} outside [-1, 1]")
        if self.execution_feedback is FeedbackKind.PASS and not self.reward > 0:
            raise ValidationError("a passing trajectory must have positive reward")


def compute_priority(td_error: float, tag: AffectTag, lambda_weight: float) -> float:
    """Replay priority ``|td| + lambda * |valence| * arousal``."""
    _check_finite("priority input", td_error, tag.valence, tag.arousal, lambda_weight)
    if lambda_weight < 0:
        raise ValidationError("lambda_weight must be non-negative")
    return abs(td_error) + lambda_weight * abs(tag.valence) * tag.arousal


@dataclass(frozen=True, eq=False)
class BufferEntry:
    trajectory: Trajectory
    tag: AffectTag
    td_error: float
    priority: float
    seq: int

    @classmethod
    def build(
        cls, trajectory: Trajectory, tag: AffectTag, td_error: float, lambda_weight: float, seq: int = -1
    ) -> "BufferEntry":
        """Create an entry whose priority is derived from its own fields.

        ``seq`` is normally left at -1 and assigned by the buffer on insert.
        """
        return cls(trajectory, tag, float(td_error), compute_priority(td_error, tag, lambda_weight), seq)

    def with_seq(self, seq: int) -> "BufferEntry":
        return dataclasses.replace(self, seq=seq)


@dataclass(frozen=True)
class ExperimentConfig:
    lambda_weight: float = 0.6
    dream_valence_threshold: float = 0.5
    dream_arousal_threshold: float = 0.7
    prune_valence_threshold: float = 0.2
    prune_arousal_threshold: float = 0.3
    entropy_keep_threshold: float = 0.3
    dream_multiplier: int = 5
    capacity: int = 1_000_000
    dream_mix_fraction: float = 0.8
    variance_floor: float = 0.1
    immediate_replay_gate: float = -0.5
    success_break_reward: float = 0.9
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    iterations_per_prompt: int = 100
    use_prioritization: bool = True
    use_pruning: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValidationError("config JSON must be an object")
        return cls.from_dict(data)


def desk_config(**changes: Any) -> ExperimentConfig:
    """Default configuration with the desk-scale capacity of 10^4."""
    return ExperimentConfig(capacity=10_000).replace(**changes)


_UNIT_FIELDS = (
    "dream_valence_threshold",
    "dream_arousal_threshold",
    "prune_valence_threshold",
    "prune_arousal_threshold",
    "entropy_keep_threshold",
)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Return every violated range constraint; an empty list means valid."""
    problems: list[str] = []

    def real(name: str) -> float | None:
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            problems.append(f"{name} is not a finite real")
            return None
        return float(value)

    lam = real("lambda_weight")
    if lam is not None and lam < 0:
        problems.append("lambda_weight < 0")
    for name in _UNIT_FIELDS:
        value = real(name)
        if value is not None and not 0.0 <= value <= 1.0:
            problems.append(f"{name} ∉ [0,1]")
    mix = real("dream_mix_fraction")
    if mix is not None and not 0.0 <= mix <= 1.0:
        problems.append("dream_mix_fraction ∉ [0,1]")
    floor = real("variance_floor")
    if floor is not None and floor < 0:
        problems.append("variance_floor < 0")
    for name in ("immediate_replay_gate", "success_break_reward"):
        value = real(name)
        if value is not None and not -1.0 <= value <= 1.0:
            problems.append(f"{name} ∉ [-1,1]")

    for name, lower in (("dream_multiplier", 1), ("capacity", 1), ("iterations_per_prompt", 1)):
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{name} is not an integer")
        elif value < lower:
            problems.append(f"{name} < {lower}")
    if not cfg.seeds:
        problems.append("seeds is empty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        problems.append("seeds contain duplicates")
    for name in ("use_prioritization", "use_pruning"):
        if not isinstance(getattr(cfg, name), bool):
            problems.append(f"{name} is not a boolean")
    return problems


__all__ = [
    "FEATURE_DIM",
    "AffectTag",
    "BufferEntry",
    "ExperimentConfig",
    "FeedbackKind",
    "Rng",
    "Trajectory",
    "ValidationError",
    "compute_priority",
    "desk_config",
    "make_rng",
    "validate_config",
]
