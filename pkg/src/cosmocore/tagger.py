"""Affect taggers: a rule-based labeler and a small numpy MLP.

The MLP maps a 512-dim feature vector through a 128-unit ReLU layer to two
outputs; output 0 goes through tanh (valence), output 1 through the
logistic function (arousal). Both weight matrices carry their bias as the
last column.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cosmocore.core import FEATURE_DIM, AffectTag, FeedbackKind, Rng, Trajectory, ValidationError

HIDDEN_DIM = 128
OUTPUT_DIM = 2
CHECKPOINT_VERSION = 1
_BINARY_MAGIC = b"CCTG"

# valence ceiling forced onto failing feedback
_FAILURE_VALENCE_CAP = {
    FeedbackKind.SYNTAX_ERROR: -0.8,
    FeedbackKind.SEMANTIC_ERROR: -0.6,
    FeedbackKind.RUNTIME_ERROR: -0.6,
}


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def affect_from_signal(feedback: FeedbackKind, signal: float, td_error: float, td_scale: float) -> AffectTag:
    """Rule-based tag from a reward-like ``signal`` and a TD error.

    Valence is the clamped signal, capped below zero for failing feedback;
    arousal is ``|td_error| / td_scale`` clamped to [0, 1].
    """
    if not td_scale > 0:
        raise ValidationError("td_scale must be positive")
    valence = _clamp(float(signal), -1.0, 1.0)
    cap = _FAILURE_VALENCE_CAP.get(FeedbackKind(feedback))
    if cap is not None:
        valence = min(valence, cap)
    return AffectTag(valence, _clamp(abs(td_error) / td_scale, 0.0, 1.0))


def heuristic_tag(trajectory: Trajectory, td_error: float, td_scale: float) -> AffectTag:
    return affect_from_signal(trajectory.execution_feedback, trajectory.reward, td_error, td_scale)


@dataclass(frozen=True)
class TaggerTrainConfig:
    learning_rate: float = 1e-3
    l2_coefficient: float = 1e-4
    batch_size: int = 32
    epochs: int = 10

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.l2_coefficient < 0:
            raise ValidationError("l2_coefficient must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainReport:
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MlpTagger:
    def __init__(self, w1: np.ndarray, w2: np.ndarray) -> None:
        w1 = np.array(w1, dtype=np.float64)
        w2 = np.array(w2, dtype=np.float64)
        if w1.shape != (HIDDEN_DIM, FEATURE_DIM + 1) or w2.shape != (OUTPUT_DIM, HIDDEN_DIM + 1):
            raise ValidationError(f"bad weight shapes {w1.shape}, {w2.shape}")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise ValidationError("weights must be finite")
        self.w1 = w1
        self.w2 = w2

    @classmethod
    def zeros(cls) -> "MlpTagger":
        return cls(np.zeros((HIDDEN_DIM, FEATURE_DIM + 1)), np.zeros((OUTPUT_DIM, HIDDEN_DIM + 1)))

    @classmethod
    def initialize(cls, rng: Rng) -> "MlpTagger":
        """Uniform init in +-1/sqrt(fan_in), biases included."""
        b1 = 1.0 / np.sqrt(FEATURE_DIM)
        b2 = 1.0 / np.sqrt(HIDDEN_DIM)
        return cls(
            rng.uniform(-b1, b1, size=(HIDDEN_DIM, FEATURE_DIM + 1)),
            rng.uniform(-b2, b2, size=(OUTPUT_DIM, HIDDEN_DIM + 1)),
        )

    def copy(self) -> "MlpTagger":
        return MlpTagger(self.w1.copy(), self.w2.copy())

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        xb = _with_bias(x)
        z1 = xb @ self.w1.T
        h = np.maximum(z1, 0.0)
        hb = _with_bias(h)
        z2 = hb @ self.w2.T
        out = np.stack([np.tanh(z2[:, 0]), _sigmoid(z2[:, 1])], axis=1)
        return xb, z1, hb, out

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Batch forward pass: (N, 512) -> (N, 2) of (valence, arousal)."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != FEATURE_DIM:
            raise ValidationError(f"features must have shape (N, {FEATURE_DIM}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features must be finite")
        return self._forward(x)[3]

    def forward(self, features: np.ndarray) -> AffectTag:
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (FEATURE_DIM,):
            raise ValidationError(f"features must have shape ({FEATURE_DIM},), got {x.shape}")
        v, a = self.predict(x[None, :])[0]
        return AffectTag(float(v), float(a))

    def tag(self, trajectory: Trajectory) -> AffectTag:
        return self.forward(trajectory.prompt_features)

    # -- training -----------------------------------------------------------

    def l2_penalty(self) -> float:
        """Sum of squared weights, bias columns excluded."""
        return float((self.w1[:, :-1] ** 2).sum() + (self.w2[:, :-1] ** 2).sum())

    def loss(self, x: np.ndarray, y: np.ndarray, l2: float) -> float:
        out = self._forward(np.atleast_2d(x))[3]
        return float(np.mean((out - np.atleast_2d(y)) ** 2)) + l2 * self.l2_penalty()

    def gradients(self, x: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss and its gradients with respect to ``w1`` and ``w2``."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        xb, z1, hb, out = self._forward(x)
        diff = out - y
        loss = float(np.mean(diff**2)) + l2 * self.l2_penalty()
        d_out = 2.0 * diff / diff.size
        # chain through the output squashing
        d_z2 = np.empty_like(d_out)
        d_z2[:, 0] = d_out[:, 0] * (1.0 - out[:, 0] ** 2)
        d_z2[:, 1] = d_out[:, 1] * out[:, 1] * (1.0 - out[:, 1])
        g2 = d_z2.T @ hb
        d_h = d_z2 @ self.w2[:, :-1]
        d_z1 = d_h * (z1 > 0)
        g1 = d_z1.T @ xb
        g1[:, :-1] += 2.0 * l2 * self.w1[:, :-1]
        g2[:, :-1] += 2.0 * l2 * self.w2[:, :-1]
        return loss, g1, g2

    # -- checkpoints --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "dims": [FEATURE_DIM, HIDDEN_DIM, OUTPUT_DIM],
            "W1": self.w1.ravel().tolist(),
            "W2": self.w2.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpTagger":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {data.get('version')!r}")
        if list(data.get("dims", [])) != [FEATURE_DIM, HIDDEN_DIM, OUTPUT_DIM]:
            raise ValidationError(f"unsupported dims {data.get('dims')!r}")
        w1 = np.asarray(data["W1"], dtype=np.float64).reshape(HIDDEN_DIM, FEATURE_DIM + 1)
        w2 = np.asarray(data["W2"], dtype=np.float64).reshape(OUTPUT_DIM, HIDDEN_DIM + 1)
        return cls(w1, w2)

    def to_bytes(self) -> bytes:
        header = _BINARY_MAGIC + struct.pack("<4I", CHECKPOINT_VERSION, FEATURE_DIM, HIDDEN_DIM, OUTPUT_DIM)
        return header + self.w1.astype("<f8").tobytes() + self.w2.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MlpTagger":
        if blob[:4] != _BINARY_MAGIC:
            raise ValidationError("not a tagger checkpoint")
        version, d_in, d_h, d_out = struct.unpack("<4I", blob[4:20])
        if version != CHECKPOINT_VERSION or (d_in, d_h, d_out) != (FEATURE_DIM, HIDDEN_DIM, OUTPUT_DIM):
            raise ValidationError("unsupported checkpoint header")
        n1 = HIDDEN_DIM * (FEATURE_DIM + 1)
        n2 = OUTPUT_DIM * (HIDDEN_DIM + 1)
        data = np.frombuffer(blob[20:], dtype="<f8")
        if data.size != n1 + n2:
            raise ValidationError("truncated checkpoint")
        return cls(data[:n1].reshape(HIDDEN_DIM, -1), data[n1:].reshape(OUTPUT_DIM, -1))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        else:
            path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "MlpTagger":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        return cls.from_bytes(path.read_bytes())


def _stack_dataset(dataset: Sequence[tuple[np.ndarray, AffectTag]]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ValidationError("training dataset is empty")
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    y = np.array([[t.valence, t.arousal] for _, t in dataset])
    if x.shape[1] != FEATURE_DIM:
        raise ValidationError(f"features must have {FEATURE_DIM} elements")
    return x, y


def train(tagger: MlpTagger, dataset: Sequence[tuple[np.ndarray, AffectTag]], cfg: TaggerTrainConfig, rng: Rng) -> TrainReport:
    """Mini-batch gradient descent on MSE + L2; mutates ``tagger`` in place.

    Each reported loss is measured on the full dataset after the epoch.
    """
    x, y = _stack_dataset(dataset)
    report = TrainReport(tagger.loss(x, y, cfg.l2_coefficient))
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, g1, g2 = tagger.gradients(x[batch], y[batch], cfg.l2_coefficient)
            tagger.w1 -= cfg.learning_rate * g1
            tagger.w2 -= cfg.learning_rate * g2
        report.epoch_losses.append(tagger.loss(x, y, cfg.l2_coefficient))
    return report


def gradient_check(
    tagger: MlpTagger, sample: tuple[np.ndarray, AffectTag], epsilon: float = 1e-5, l2: float = 1e-4
) -> float:
    """Max relative error between backprop and central differences over all weights.

    Relative error is ``|g - n| / max(|g| + |n|, 1e-6)``, so entries where
    both gradients are essentially zero count as agreeing.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValidationError("epsilon must lie in (0, 1e-2]")
    features, target = sample
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    y = np.array([[target.valence, target.arousal]])
    _, g1, g2 = tagger.gradients(x, y, l2)
    n1 = _numeric_grad_w1(tagger, x[0], y[0], epsilon, l2)
    n2 = _numeric_grad_w2(tagger, x, y, epsilon, l2)
    errs = [
        np.abs(g - n) / np.maximum(np.abs(g) + np.abs(n), 1e-6)
        for g, n in ((g1, n1), (g2, n2))
    ]
    return float(max(e.max() for e in errs))


def _loss_from_preactivations(z1: np.ndarray, w2: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Data loss for a stack of hidden pre-activation vectors (rows)."""
    h = np.maximum(z1, 0.0)
    z2 = h @ w2[:, :-1].T + w2[:, -1]
    out = np.stack([np.tanh(z2[:, 0]), _sigmoid(z2[:, 1])], axis=1)
    return np.mean((out - y) ** 2, axis=1)


def _numeric_grad_w1(tagger: MlpTagger, x: np.ndarray, y: np.ndarray, eps: float, l2: float) -> np.ndarray:
    # Perturbing W1[j, k] by d shifts hidden pre-activation j by d * xb[k] and
    # nothing else, so each column k is one batched forward over 128 copies.
    xb = np.append(x, 1.0)
    z_base = tagger.w1 @ xb
    eye = np.eye(HIDDEN_DIM)
    grad = np.empty_like(tagger.w1)
    for k in range(xb.shape[0]):
        plus = _loss_from_preactivations(z_base + eps * xb[k] * eye, tagger.w2, y)
        minus = _loss_from_preactivations(z_base - eps * xb[k] * eye, tagger.w2, y)
        grad[:, k] = (plus - minus) / (2 * eps)
    if l2:
        w = tagger.w1[:, :-1]
        grad[:, :-1] += l2 * ((w + eps) ** 2 - (w - eps) ** 2) / (2 * eps)
    return grad


def _numeric_grad_w2(tagger: MlpTagger, x: np.ndarray, y: np.ndarray, eps: float, l2: float) -> np.ndarray:
    probe = tagger.copy()
    grad = np.empty_like(tagger.w2)
    for idx in np.ndindex(*tagger.w2.shape):
        orig = probe.w2[idx]
        probe.w2[idx] = orig + eps
        plus = probe.loss(x, y, l2)
        probe.w2[idx] = orig - eps
        minus = probe.loss(x, y, l2)
        probe.w2[idx] = orig
        grad[idx] = (plus - minus) / (2 * eps)
    return grad
