"""Bounded replay store with dream gating and rank-based eviction.

The dream queue is a gated view over a single store: an entry is
"dream" when its affect tag passes the high-impact gate, and the sampling
modes weight or select entries by that gate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np

from cosmocore.core import (
    FEATURE_DIM,
    AffectTag,
    BufferEntry,
    ExperimentConfig,
    FeedbackKind,
    Rng,
    Trajectory,
    ValidationError,
    compute_priority,
)
from cosmocore.miniworld.dsl import Program

SNAPSHOT_VERSION = 1
DREAM = "dream"
UNIFORM = "uniform"


def is_dream(tag: AffectTag, cfg: ExperimentConfig) -> bool:
    return abs(tag.valence) > cfg.dream_valence_threshold and tag.arousal > cfg.dream_arousal_threshold


def prune_thresholds(cfg: ExperimentConfig, prune_scale: float = 1.0) -> tuple[float, float]:
    """Scaled (valence, arousal) prune thresholds, capped at the dream gates."""
    if not prune_scale > 0:
        raise ValidationError(f"prune_scale must be positive, got {prune_scale}")
    return (
        min(prune_scale * cfg.prune_valence_threshold, cfg.dream_valence_threshold),
        min(prune_scale * cfg.prune_arousal_threshold, cfg.dream_arousal_threshold),
    )


def is_prunable(tag: AffectTag, policy_entropy: float, cfg: ExperimentConfig, prune_scale: float = 1.0) -> bool:
    if not 0.0 <= policy_entropy <= 1.0:
        raise ValidationError(f"policy_entropy must lie in [0, 1], got {policy_entropy}")
    v_max, a_max = prune_thresholds(cfg, prune_scale)
    return abs(tag.valence) < v_max and tag.arousal < a_max and policy_entropy <= cfg.entropy_keep_threshold


@dataclass(frozen=True)
class SampleBatch:
    entries: list[BufferEntry]
    provenance: list[str]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def seqs(self) -> list[int]:
        return [e.seq for e in self.entries]

    def count(self, provenance: str) -> int:
        return sum(1 for p in self.provenance if p == provenance)


def _dream_share(mix_fraction: float, batch_size: int) -> int:
    # round first so e.g. 0.7 * 10 = 7.000000000000001 does not ceil to 8
    return min(batch_size, math.ceil(round(mix_fraction * batch_size, 9)))


class CosmoBuffer:
    def __init__(self, config: ExperimentConfig, capacity: int | None = None) -> None:
        self.config = config
        self.capacity = int(config.capacity if capacity is None else capacity)
        if self.capacity < 1:
            raise ValidationError("capacity must be >= 1")
        self._entries: list[BufferEntry] = []
        self._next_seq = 0
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[BufferEntry]:
        return iter(self._entries)

    @property
    def entries(self) -> tuple[BufferEntry, ...]:
        return tuple(self._entries)

    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            pri = np.array([e.priority for e in self._entries], dtype=np.float64)
            dream = np.array([is_dream(e.tag, self.config) for e in self._entries], dtype=bool)
            self._cache = (pri, dream)
        return self._cache

    def dream_mask(self) -> np.ndarray:
        return self._arrays()[1].copy()

    def insert(self, entry: BufferEntry) -> BufferEntry | None:
        """Store ``entry`` and return the evicted entry, if any.

        The entry gets the next sequence number and a priority recomputed
        with this buffer's lambda. When full, the resident entry with the
        lowest priority is evicted, oldest first on ties.
        """
        stored = BufferEntry(
            entry.trajectory,
            entry.tag,
            entry.td_error,
            compute_priority(entry.td_error, entry.tag, self.config.lambda_weight),
            self._next_seq,
        )
        self._next_seq += 1
        evicted = None
        if len(self._entries) >= self.capacity:
            victim = min(range(len(self._entries)), key=lambda i: (self._entries[i].priority, self._entries[i].seq))
            evicted = self._entries.pop(victim)
        self._entries.append(stored)
        self._cache = None
        return evicted

    def sample_multiplier(self, batch_size: int, rng: Rng) -> SampleBatch:
        """Draw with replacement; dream entries weigh ``dream_multiplier``, others 1."""
        if not self._entries:
            raise ValidationError("cannot sample from an empty buffer")
        _, dream = self._arrays()
        weights = np.where(dream, float(self.config.dream_multiplier), 1.0)
        idx = rng.choice(len(self._entries), size=batch_size, replace=True, p=weights / weights.sum())
        return SampleBatch(
            [self._entries[i] for i in idx],
            [DREAM if dream[i] else UNIFORM for i in idx],
        )

    def sample_mixture(self, batch_size: int, rng: Rng, mix_fraction: float | None = None) -> SampleBatch:
        """Dream share drawn proportional to priority, the rest uniform.

        The dream share is ``ceil(mix_fraction * batch_size)`` draws; it falls
        back to uniform draws when no entry passes the dream gate.
        """
        if not self._entries:
            raise ValidationError("cannot sample from an empty buffer")
        mix = self.config.dream_mix_fraction if mix_fraction is None else mix_fraction
        pri, dream = self._arrays()
        dream_idx = np.flatnonzero(dream)
        n_dream = _dream_share(mix, batch_size) if dream_idx.size else 0
        picks: list[int] = []
        provenance: list[str] = []
        if n_dream:
            p = pri[dream_idx]
            chosen = rng.choice(dream_idx.size, size=n_dream, replace=True, p=p / p.sum())
            picks.extend(int(dream_idx[i]) for i in chosen)
            provenance.extend([DREAM] * n_dream)
        n_uniform = batch_size - n_dream
        if n_uniform:
            picks.extend(int(i) for i in rng.integers(len(self._entries), size=n_uniform))
            provenance.extend([UNIFORM] * n_uniform)
        return SampleBatch([self._entries[i] for i in picks], provenance)

    def remove_if(self, predicate: Callable[[BufferEntry], bool]) -> list[BufferEntry]:
        kept: list[BufferEntry] = []
        removed: list[BufferEntry] = []
        for e in self._entries:
            (removed if predicate(e) else kept).append(e)
        if removed:
            self._entries = kept
            self._cache = None
        return removed

    def prune(self, policy_entropy: float, prune_scale: float = 1.0) -> int:
        """Delete every prunable entry under the scaled thresholds; returns the count."""
        prune_thresholds(self.config, prune_scale)
        cfg = self.config
        return len(self.remove_if(lambda e: is_prunable(e.tag, policy_entropy, cfg, prune_scale)))

    def occupancy(self) -> tuple[int, float]:
        return len(self._entries), len(self._entries) / self.capacity

    # -- snapshots ----------------------------------------------------------

    def to_dict(self, include_features: bool = True) -> dict[str, Any]:
        return {
            "version": SNAPSHOT_VERSION,
            "config": self.config.to_dict(),
            "capacity": self.capacity,
            "next_seq": self._next_seq,
            "features_elided": not include_features,
            "entries": [_entry_to_dict(e, include_features) for e in self._entries],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CosmoBuffer":
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValidationError(f"unsupported snapshot version {data.get('version')!r}")
        buf = cls(ExperimentConfig.from_dict(data["config"]), capacity=data["capacity"])
        for item in data["entries"]:
            entry = _entry_from_dict(item)
            if entry.priority != compute_priority(entry.td_error, entry.tag, buf.config.lambda_weight):
                raise ValidationError(f"snapshot entry {entry.seq} has an inconsistent priority")
            buf._entries.append(entry)
        buf._next_seq = int(data["next_seq"])
        return buf

    def save(self, path: str | Path, include_features: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_features)), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CosmoBuffer":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _entry_to_dict(entry: BufferEntry, include_features: bool) -> dict[str, Any]:
    traj = entry.trajectory
    program = traj.generated_program
    return {
        "seq": entry.seq,
        "td_error": entry.td_error,
        "priority": entry.priority,
        "valence": entry.tag.valence,
        "arousal": entry.tag.arousal,
        "task_id": traj.task_id,
        "program": program.to_dict() if isinstance(program, Program) else program,
        "feedback": traj.execution_feedback.value,
        "feedback_detail": traj.feedback_detail,
        "reward": traj.reward,
        "features": traj.prompt_features.tolist() if include_features else None,
    }


def _entry_from_dict(item: dict[str, Any]) -> BufferEntry:
    # elided features come back as zeros
    features = item["features"] if item["features"] is not None else np.zeros(FEATURE_DIM)
    program = item["program"]
    if isinstance(program, dict) and "ops" in program:
        program = Program.from_dict(program)
    traj = Trajectory(
        np.asarray(features, dtype=np.float64),
        program,
        FeedbackKind(item["feedback"]),
        item["reward"],
        item["task_id"],
        item.get("feedback_detail", ""),
    )
    return BufferEntry(traj, AffectTag(item["valence"], item["arousal"]), item["td_error"], item["priority"], item["seq"])
