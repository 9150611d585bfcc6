"""Teacher pool, teacher selection strategies, soft-target loss, feature mixup and loss composition."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gazetat import ops
from gazetat.errors import OrdinalError, TeacherPoolError
from gazetat.gazenet import GazeNet
from gazetat.ordinal import LOG_EPS, ordinal_loss
from gazetat.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


class TeacherStrategy(str, Enum):
    NONE = "none"
    LAST_ONE = "last_one"
    MEAN = "mean"
    BEST = "best"
    RANDOM = "random"


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    hard: float = Field(default=0.2, ge=0)
    mix: float = Field(default=0.4, ge=0)
    teacher: float = Field(default=0.6, ge=0)


@dataclass
class TeacherEntry:
    model: GazeNet
    val_error: float
    mini_generation: int
    path: Optional[Path] = None


class TeacherPool:
    """Append-only list of frozen snapshots whose validation error passed the quality filter.

    Without an explicit ``threshold`` the first admitted teacher fixes it at
    ``threshold_factor`` times its own validation error.
    """

    def __init__(
        self,
        strategy: Union[TeacherStrategy, str] = TeacherStrategy.RANDOM,
        threshold: Optional[float] = None,
        threshold_factor: float = 1.1,
    ):
        self.strategy = TeacherStrategy(strategy)
        self.threshold = threshold
        self.threshold_factor = threshold_factor
        self.entries: list[TeacherEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        errors = ", ".join(f"{e.val_error:.3f}" for e in self.entries)
        return f"TeacherPool({self.strategy.value}, threshold={self.threshold}, errors=[{errors}])"

    def add_teacher(self, snapshot: GazeNet, val_error: float, mini_generation: int) -> bool:
        if not snapshot.is_frozen():
            raise TeacherPoolError("teacher snapshots must be frozen (use model.snapshot())")
        if self.threshold is None:
            self.threshold = self.threshold_factor * val_error
        if val_error > self.threshold:
            logger.warning(
                "teacher from mini-generation %d rejected: val error %.4f cm above threshold %.4f cm",
                mini_generation, val_error, self.threshold,
            )
            return False
        self.entries.append(TeacherEntry(snapshot, float(val_error), mini_generation))
        logger.info("teacher from mini-generation %d admitted (val error %.4f cm, pool size %d)",
                    mini_generation, val_error, len(self))
        return True

    def choose(self, rng: np.random.Generator) -> list[TeacherEntry]:
        """Teachers supervising the next stretch of training; empty for strategy ``none``."""
        if self.strategy is TeacherStrategy.NONE:
            return []
        if not self.entries:
            raise TeacherPoolError(f"teacher strategy {self.strategy.value!r} needs a non-empty pool")
        if self.strategy is TeacherStrategy.RANDOM:
            return [self.entries[int(rng.integers(len(self.entries)))]]
        if self.strategy is TeacherStrategy.BEST:
            return [min(self.entries, key=lambda e: e.val_error)]
        if self.strategy is TeacherStrategy.LAST_ONE:
            return [self.entries[-1]]
        return list(self.entries)


def predict_teachers(teachers: Sequence[TeacherEntry], inputs) -> np.ndarray:
    """Mean bin probabilities of ``teachers`` on one batch of inputs."""
    with no_grad():
        outputs = [entry.model(*inputs).data for entry in teachers]
    return np.mean(outputs, axis=0)


def teacher_targets(pool: TeacherPool, inputs, seed: int) -> Optional[np.ndarray]:
    """Soft ordinal targets y' for ``inputs``; None under strategy ``none``.

    Every call with the same ``seed`` picks the same random teacher, so the
    trainer passes a per-epoch (or per-mini-generation) seed.
    """
    teachers = pool.choose(np.random.default_rng(seed))
    return predict_teachers(teachers, inputs) if teachers else None


def teacher_loss(student_probs: Tensor, y_prime, eps: float = LOG_EPS) -> Tensor:
    return ordinal_loss(student_probs, y_prime, eps=eps)


AlphaSampler = Callable[[int], np.ndarray]


def uniform_alpha(rng: np.random.Generator) -> AlphaSampler:
    return lambda n: rng.uniform(0.0, 1.0, size=n)


def mixup_features(feat_i: Tensor, feat_j: Tensor, label_i, label_j, alpha) -> tuple[Tensor, np.ndarray]:
    """Convex combination ``alpha * i + (1 - alpha) * j`` of features and labels.

    ``alpha`` is a scalar, a per-row array, or an ``AlphaSampler`` called with the row count.
    """
    label_i, label_j = np.asarray(label_i), np.asarray(label_j)
    if feat_i.shape != feat_j.shape or label_i.shape != label_j.shape or label_i.shape[:-1] != feat_i.shape[:-1]:
        raise OrdinalError(
            f"mixup shape mismatch: features {feat_i.shape}/{feat_j.shape}, labels {label_i.shape}/{label_j.shape}"
        )
    n = feat_i.shape[0] if feat_i.ndim > 1 else 1
    alpha = np.asarray(alpha(n) if callable(alpha) else alpha, dtype=feat_i.dtype)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("mixup alpha must lie in [0, 1]")
    a = alpha.reshape(-1, 1) if feat_i.ndim > 1 and alpha.ndim else alpha
    mixed = feat_i * a + feat_j * (1.0 - a)
    return mixed, a * label_i + (1.0 - a) * label_j


def mixup_batch(features: Tensor, labels: np.ndarray, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """Pair every row with a row of a shuffled copy of the batch, one alpha per pair."""
    partner = rng.permutation(features.shape[0])
    return mixup_features(features, ops.take(features, partner, axis=0), labels, labels[partner], uniform_alpha(rng))


def total_loss(hard, mix, teacher, weights: LossWeights):
    """Weighted sum; a missing component contributes 0."""
    total = 0.0
    for weight, component in ((weights.hard, hard), (weights.mix, mix), (weights.teacher, teacher)):
        if component is not None and weight:
            total = component * weight + total
    return total
