"""Ordinal label encoding, the ordinal loss, threshold decoding and center-bin masks.

A scalar target ``gt`` becomes B bits, bit b (0-based) set iff
``(b + 1) * bin_size <= gt - range_min``. Predictions count the bins whose
probability reaches 0.5 and return the middle of the interval that count selects.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gazetat import ops
from gazetat.errors import OrdinalError
from gazetat.tensor import Tensor

logger = logging.getLogger(__name__)

LOG_EPS = 1e-7


class OrdinalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    bins: int = Field(ge=2)
    bin_size: float = Field(gt=0)
    range_min: float = 0.0

    @classmethod
    def from_range(cls, bins: int, range_min: float, range_max: float) -> "OrdinalConfig":
        """Split [range_min, range_max) into ``bins + 1`` equal intervals."""
        return cls(bins=bins, bin_size=(range_max - range_min) / (bins + 1), range_min=range_min)

    @property
    def range_max(self) -> float:
        return self.range_min + (self.bins + 1) * self.bin_size

    def covers(self, lo: float, hi: float) -> bool:
        return self.range_min <= lo and hi <= self.range_max + 1e-9


def encode(gt, cfg: OrdinalConfig) -> np.ndarray:
    """Hard ordinal label(s): shape ``(..., bins)`` of 0/1 floats."""
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all(np.isfinite(gt)):
        raise OrdinalError(f"cannot encode non-finite ground truth {gt[~np.isfinite(gt)][:3]}")
    upper = np.nextafter(cfg.range_max, -np.inf)
    outside = (gt < cfg.range_min) | (gt > upper)
    if np.any(outside):
        logger.warning(
            "clamping %d ground-truth value(s) into [%.4g, %.4g)", int(outside.sum()), cfg.range_min, cfg.range_max
        )
        gt = np.clip(gt, cfg.range_min, upper)
    thresholds = (np.arange(cfg.bins) + 1) * cfg.bin_size
    return ((gt - cfg.range_min)[..., None] >= thresholds).astype(np.float64)


def bin_count(bin_probs) -> np.ndarray:
    probs = bin_probs.data if isinstance(bin_probs, Tensor) else np.asarray(bin_probs)
    return (probs >= 0.5).sum(axis=-1)


def decode(bin_probs, cfg: OrdinalConfig) -> np.ndarray:
    return cfg.range_min + cfg.bin_size * (bin_count(bin_probs) + 0.5)


def ordinal_loss(bin_probs: Tensor, target, mask: Optional[np.ndarray] = None, eps: float = LOG_EPS) -> Tensor:
    """Binary cross-entropy summed over bins and averaged over the batch.

    ``target`` may be hard or soft; ``mask`` (same shape, boolean) zeroes the
    contribution, and therefore the gradient, of the bins it excludes.
    Probabilities are clipped to ``[eps, 1 - eps]`` before the log.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=bin_probs.dtype)
    if target.shape != bin_probs.shape:
        raise OrdinalError(f"ordinal loss: predictions {bin_probs.shape} and targets {target.shape} differ")
    p = ops.clip(bin_probs, eps, 1.0 - eps)
    per_bin = -(target * ops.log(p) + (1.0 - target) * ops.log(1.0 - p))
    if mask is not None:
        per_bin = per_bin * np.asarray(mask, dtype=bin_probs.dtype)
    if per_bin.ndim == 1:
        return per_bin.sum()
    return per_bin.sum(axis=-1).mean()


def bernoulli_entropy(probs, eps: float = LOG_EPS) -> np.ndarray:
    """Summed entropy of independent Bernoulli bins, the floor of the ordinal loss against soft targets."""
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p)).sum(axis=-1)


def center_bin_mask(bin_probs, cfg: OrdinalConfig, k: int) -> np.ndarray:
    """True on the ``2k`` bins around the decoded bin index (k below, k at or above),
    shifted inward at the array edges."""
    if k <= 0:
        raise OrdinalError(f"center-bin half-width must be positive, got {k}")
    probs = bin_probs.data if isinstance(bin_probs, Tensor) else np.asarray(bin_probs)
    if probs.shape[-1] != cfg.bins:
        raise OrdinalError(f"expected {cfg.bins} bins, got {probs.shape[-1]}")
    width = min(2 * k, cfg.bins)
    start = np.clip(bin_count(probs) - k, 0, cfg.bins - width)
    idx = np.arange(cfg.bins)
    start = np.asarray(start)[..., None]
    return (idx >= start) & (idx < start + width)


class GazeCodec(BaseModel):
    """Horizontal and vertical ordinal configs; model outputs are ``[x bins | y bins]``."""

    model_config = ConfigDict(frozen=True)

    x: OrdinalConfig
    y: OrdinalConfig
    log_eps: float = Field(default=LOG_EPS, gt=0, lt=0.5)

    @classmethod
    def for_screen(
        cls, width_cm: float, height_cm: float, bins_x: int, bins_y: int, log_eps: float = LOG_EPS
    ) -> "GazeCodec":
        return cls(
            x=OrdinalConfig.from_range(bins_x, 0.0, width_cm),
            y=OrdinalConfig.from_range(bins_y, 0.0, height_cm),
            log_eps=log_eps,
        )

    @property
    def bins(self) -> int:
        return self.x.bins + self.y.bins

    def split(self, bin_probs) -> tuple[np.ndarray, np.ndarray]:
        probs = bin_probs.data if isinstance(bin_probs, Tensor) else np.asarray(bin_probs)
        if probs.shape[-1] != self.bins:
            raise OrdinalError(f"expected {self.bins} bins, got {probs.shape[-1]}")
        return probs[..., : self.x.bins], probs[..., self.x.bins:]

    def encode(self, gt_xy) -> np.ndarray:
        gt_xy = np.asarray(gt_xy, dtype=np.float64)
        return np.concatenate([encode(gt_xy[..., 0], self.x), encode(gt_xy[..., 1], self.y)], axis=-1)

    def decode(self, bin_probs) -> np.ndarray:
        px, py = self.split(bin_probs)
        return np.stack([decode(px, self.x), decode(py, self.y)], axis=-1)

    def center_mask(self, bin_probs, k: Optional[int]) -> np.ndarray:
        """Center-bin mask for both coordinates; ``k=None`` selects every bin."""
        px, py = self.split(bin_probs)
        if k is None:
            return np.ones(px.shape[:-1] + (self.bins,), dtype=bool)
        return np.concatenate([center_bin_mask(px, self.x, k), center_bin_mask(py, self.y, k)], axis=-1)
