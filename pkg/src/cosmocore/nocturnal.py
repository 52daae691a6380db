"""Sleep-like consolidation: mixture replay plus variance-adaptive pruning."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol

from cosmocore.buffer import DREAM, UNIFORM, CosmoBuffer, is_dream
from cosmocore.core import BufferEntry, Rng, ValidationError

SCALE_MIN = 0.5
SCALE_MAX = 2.0


class Learner(Protocol):
    def replay_update(self, entries: Iterable[BufferEntry]) -> Any: ...

    def confidence_variance(self, entries: Iterable[BufferEntry]) -> float: ...


@dataclass
class NocturnalState:
    prune_scale: float = 1.0
    eta: float = 0.5
    history: list[tuple[int, float | None, float, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not SCALE_MIN <= self.prune_scale <= SCALE_MAX:
            raise ValidationError(f"prune_scale must lie in [{SCALE_MIN}, {SCALE_MAX}]")


def update_prune_scale(state: NocturnalState, confidence_variance: float, variance_floor: float) -> float:
    """Move the prune scale by ``eta * (floor - variance)``, clamped to [0.5, 2].

    Low variance (an over-confident learner) raises the scale, which widens
    the prune thresholds; high variance lowers it.
    """
    if confidence_variance < 0:
        raise ValidationError("confidence_variance must be non-negative")
    scale = state.prune_scale + state.eta * (variance_floor - confidence_variance)
    state.prune_scale = min(max(scale, SCALE_MIN), SCALE_MAX)
    return state.prune_scale


@dataclass
class ConsolidationReport:
    cycle: int
    batches: int
    dream_draws: int
    uniform_draws: int
    confidence_variance: float | None
    prune_scale: float
    pruned: int
    occupancy_before: int
    occupancy_after: int
    gated_draws: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        extra = out.pop("extra")
        return {**extra, **out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def consolidate(
    buf: CosmoBuffer,
    learner: Learner,
    state: NocturnalState,
    batch_size: int,
    n_batches: int,
    policy_entropy: float,
    rng: Rng,
    *,
    prune: bool = True,
    mix_fraction: float | None = None,
) -> ConsolidationReport:
    """Replay ``n_batches`` mixture minibatches, then adapt and apply pruning.

    Confidence variance is read after the replays, over every entry that was
    replayed. With no batches there is nothing to measure, so the scale is
    left unchanged. ``prune=False`` skips the deletion step (pruning
    ablation); ``mix_fraction`` overrides the configured dream share.
    """
    cycle = len(state.history)
    before = len(buf)
    if before == 0:
        report = ConsolidationReport(cycle, 0, 0, 0, None, state.prune_scale, 0, 0, 0, 0)
        state.history.append((cycle, None, state.prune_scale, 0))
        return report

    replayed: list[BufferEntry] = []
    dream_draws = uniform_draws = 0
    for _ in range(n_batches):
        batch = buf.sample_mixture(batch_size, rng, mix_fraction)
        learner.replay_update(batch.entries)
        replayed.extend(batch.entries)
        dream_draws += batch.count(DREAM)
        uniform_draws += batch.count(UNIFORM)
    # provenance says which share a draw came from; gated counts what was drawn
    gated = sum(1 for e in replayed if is_dream(e.tag, buf.config))

    variance = learner.confidence_variance(replayed) if replayed else None
    if variance is not None:
        update_prune_scale(state, variance, buf.config.variance_floor)
    pruned = buf.prune(policy_entropy, state.prune_scale) if prune else 0
    state.history.append((cycle, variance, state.prune_scale, pruned))
    return ConsolidationReport(
        cycle, n_batches, dream_draws, uniform_draws, variance, state.prune_scale, pruned, before, len(buf), gated
    )


def append_report(path: str | Path, report: ConsolidationReport) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
