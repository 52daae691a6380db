"""Softmax preference learner over a finite per-task candidate set.

Stands in for a code-generating policy: for each task context it holds one
preference weight per candidate program and one reward estimate per
candidate. Replaying a buffer entry nudges the preference of the program it
contains by ``lr * (reward - expected_value)``.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from cosmocore.core import BufferEntry, Rng, ValidationError
from cosmocore.miniworld.dsl import Program


def softmax(weights: np.ndarray, temperature: float) -> np.ndarray:
    z = weights / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def normalized_entropy(probs: np.ndarray) -> float:
    """Shannon entropy divided by ln(K); 0 for a single action."""
    k = probs.shape[0]
    if k <= 1:
        return 0.0
    nz = probs[probs > 0]
    h = float(-(nz * np.log(nz)).sum())
    return min(max(h / math.log(k), 0.0), 1.0)


class Agent:
    def __init__(
        self,
        candidates: Mapping[str, Sequence[Program]],
        temperature: float = 1.0,
        lr: float = 0.5,
        initial_value: float = 0.0,
    ) -> None:
        if temperature <= 0:
            raise ValidationError("temperature must be positive")
        if lr < 0:
            raise ValidationError("lr must be non-negative")
        self.temperature = float(temperature)
        self.lr = float(lr)
        self.candidates: dict[str, list[Program]] = {}
        self.weights: dict[str, np.ndarray] = {}
        self.values: dict[str, np.ndarray] = {}
        self._index: dict[str, dict[Program, int]] = {}
        for task_id, progs in candidates.items():
            progs = list(progs)
            if not progs:
                raise ValidationError(f"task {task_id!r} has no candidate programs")
            self.candidates[task_id] = progs
            self.weights[task_id] = np.zeros(len(progs))
            self.values[task_id] = np.full(len(progs), float(initial_value))
            self._index[task_id] = {p: i for i, p in enumerate(progs)}

    def _context(self, task_id: str) -> np.ndarray:
        if task_id not in self.weights:
            raise ValidationError(f"unknown task context {task_id!r}")
        return self.weights[task_id]

    def probabilities(self, task_id: str) -> np.ndarray:
        return softmax(self._context(task_id), self.temperature)

    def entropy(self, task_id: str) -> float:
        return normalized_entropy(self.probabilities(task_id))

    def mean_entropy(self) -> float:
        """Policy entropy averaged over every task context."""
        if not self.weights:
            return 0.0
        return float(np.mean([self.entropy(t) for t in self.weights]))

    def expected_value(self, task_id: str) -> float:
        return float(self.probabilities(task_id) @ self.values[task_id])

    def action_index(self, task_id: str, program: Program) -> int:
        self._context(task_id)
        try:
            return self._index[task_id][program]
        except KeyError:
            raise ValidationError(f"program is not a candidate for {task_id!r}") from None

    def act(self, task_id: str, rng: Rng) -> tuple[Program, float, float]:
        """Sample a candidate; returns (program, its probability, normalized entropy)."""
        probs = self.probabilities(task_id)
        cdf = np.cumsum(probs)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, probs.shape[0] - 1)
        return self.candidates[task_id][i], float(probs[i]), normalized_entropy(probs)

    def td_error(self, task_id: str, program: Program, reward: float) -> float:
        self.action_index(task_id, program)
        return float(reward) - self.expected_value(task_id)

    def learn_update(self, entry: BufferEntry) -> float:
        """Apply one replay of ``entry``; returns the TD error before the update."""
        traj = entry.trajectory
        i = self.action_index(traj.task_id, traj.generated_program)
        td = float(traj.reward) - self.expected_value(traj.task_id)
        self.weights[traj.task_id][i] += self.lr * td
        # the environment is deterministic, so the observed reward is exact
        self.values[traj.task_id][i] = traj.reward
        return td

    # learner protocol used by the nocturnal phase

    def replay_update(self, entries: Iterable[BufferEntry]) -> list[float]:
        return [self.learn_update(e) for e in entries]

    def confidence_variance(self, entries: Iterable[BufferEntry]) -> float:
        """Std. dev. of the value estimates at the task contexts of ``entries``."""
        vals = [self.expected_value(e.trajectory.task_id) for e in entries]
        if len(vals) < 2:
            return 0.0
        return float(np.std(vals))
