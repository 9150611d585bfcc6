"""Center-bin PGD perturbations, clean/adversarial batch mixing, and the MSD jitter metric."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gazetat.errors import SequenceError
from gazetat.gazenet import GazeNet
from gazetat.ordinal import ordinal_loss
from gazetat.synth import Batch, FixationSequence, to_float
from gazetat.tensor import Tensor, grad, no_grad

logger = logging.getLogger(__name__)

PIXEL_SCALE = 255.0


class AttackPatches(str, Enum):
    ALL = "all"
    EYES = "eyes"


class PgdConfig(BaseModel):
    """``epsilon`` and ``gamma`` are in 0-255 pixel units; ``center_bins`` = 0 uses every bin."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(default=3.0, ge=0)
    gamma: float = Field(default=1.0, ge=0)
    steps: int = Field(default=1, ge=1)
    center_bins: int = Field(default=8, ge=0)
    org_percent: float = Field(default=90.0, ge=0, le=100)
    attack_patches: AttackPatches = AttackPatches.ALL

    @model_validator(mode="after")
    def _check(self) -> "PgdConfig":
        if self.center_bins % 2:
            raise ValueError(f"center_bins must be even (2k), got {self.center_bins}")
        if self.gamma > 2 * self.epsilon:
            logger.warning("PGD step %.3g exceeds twice the budget %.3g; every step saturates", self.gamma, self.epsilon)
        return self

    @property
    def half_width(self) -> Optional[int]:
        return self.center_bins // 2 or None

    @property
    def patch_slots(self) -> tuple[int, ...]:
        return (0, 1, 2) if self.attack_patches is AttackPatches.ALL else (1, 2)


def project_linf(candidate: np.ndarray, clean: np.ndarray, epsilon: float) -> np.ndarray:
    """Project ``candidate`` onto the ``epsilon`` (pixel units) L-inf ball around ``clean`` and onto [0, 1].

    The bound holds exactly in the dtype of ``clean``: the clip radius is the
    largest representable value not above epsilon / 255, and elements that
    rounding in ``clean + delta`` still pushes past the bound are stepped back
    toward ``clean`` one ulp at a time.
    """
    clean = np.asarray(clean)
    dtype = clean.dtype
    limit = epsilon / PIXEL_SCALE
    radius = dtype.type(limit)
    if float(radius) > limit:
        radius = np.nextafter(radius, dtype.type(0))
    delta = np.clip(np.asarray(candidate, dtype=dtype) - clean, -radius, radius)
    adv = np.clip(clean + delta, 0.0, 1.0).astype(dtype, copy=False)
    while True:
        gap = np.abs(adv.astype(np.float64) - clean.astype(np.float64))
        over = (gap > limit) | (gap * PIXEL_SCALE > epsilon)
        if not over.any():
            return adv
        adv[over] = np.nextafter(adv[over], clean[over])


def pgd_attack(model: GazeNet, inputs: Sequence[np.ndarray], target: np.ndarray, cfg: PgdConfig) -> tuple[np.ndarray, ...]:
    """``cfg.steps`` signed-gradient ascent steps on the center-bin-masked ordinal loss.

    Each step is projected onto the L-inf ball of radius epsilon around the
    clean input and onto [0, 1]. The model runs in eval mode and its
    parameters are not updated. A non-finite gradient aborts the attack and
    returns the clean input.
    """
    clean = [np.asarray(x) for x in inputs]
    adv = [x.copy() for x in clean]
    gamma = cfg.gamma / PIXEL_SCALE
    slots = cfg.patch_slots
    was_training = model.training
    model.eval()
    try:
        for _ in range(cfg.steps):
            tensors = [Tensor(x, requires_grad=i in slots) for i, x in enumerate(adv)]
            probs = model(*tensors)
            mask = model.codec.center_mask(probs, cfg.half_width)
            loss = ordinal_loss(probs, target, mask, eps=model.codec.log_eps)
            grads = grad(loss, [tensors[i] for i in slots])
            if not all(np.all(np.isfinite(g)) for g in grads):
                logger.warning("non-finite input gradient; returning the clean batch")
                return tuple(x.copy() for x in clean)
            for i, g in zip(slots, grads):
                adv[i] = project_linf(adv[i] + gamma * np.sign(g), clean[i], cfg.epsilon)
    finally:
        model.train(was_training)
    return tuple(adv)


def adversarial_count(batch_size: int, org_percent: float) -> int:
    return int(math.floor(batch_size * (100.0 - org_percent) / 100.0 + 1e-9))


def perturb_batch(model: GazeNet, batch: Batch, cfg: PgdConfig, rng: np.random.Generator) -> tuple[Batch, np.ndarray]:
    """Replace a uniformly chosen ``100 - org_percent`` % of the batch by its PGD version.

    Returns the mixed batch and the positions that were perturbed.
    """
    n_adv = adversarial_count(len(batch), cfg.org_percent)
    if n_adv == 0:
        return batch, np.empty(0, dtype=np.int64)
    picked = np.sort(rng.choice(len(batch), size=n_adv, replace=False))
    attacked = pgd_attack(model, [x[picked] for x in batch.inputs], batch.labels[picked], cfg)
    mixed = [x.copy() for x in batch.inputs]
    for full, part in zip(mixed, attacked):
        full[picked] = part
    return batch.replace_inputs(*mixed), picked


def delta_stats(clean: Sequence[np.ndarray], adversarial: Sequence[np.ndarray]) -> pd.DataFrame:
    """Per-patch statistics of the perturbation in pixel units."""
    rows = []
    for name, x, x_adv in zip(("face", "left_eye", "right_eye"), clean, adversarial):
        delta = (np.asarray(x_adv, dtype=np.float64) - np.asarray(x, dtype=np.float64)) * PIXEL_SCALE
        rows.append({
            "patch": name,
            "max_abs": float(np.abs(delta).max(initial=0.0)),
            "mean_abs": float(np.abs(delta).mean()) if delta.size else 0.0,
            "changed_fraction": float(np.mean(delta != 0)) if delta.size else 0.0,
        })
    return pd.DataFrame(rows)


def _predict_sequence(model: GazeNet, seq: FixationSequence, chunk: int) -> pd.DataFrame:
    preds = []
    with no_grad():
        for start in range(0, len(seq), chunk):
            part = slice(start, start + chunk)
            inputs = (to_float(seq.face[part]), to_float(seq.left_eye[part]), to_float(seq.right_eye[part]))
            preds.append(model.predict_gaze(model(*inputs)))
    pred = np.concatenate(preds)
    return pd.DataFrame({
        "sequence_id": seq.sequence_id,
        "frame": np.arange(len(seq)),
        "gt_x": seq.gt[0],
        "gt_y": seq.gt[1],
        "pred_x": pred[:, 0],
        "pred_y": pred[:, 1],
    })


def sequence_predictions(
    model: GazeNet, sequences: Sequence[FixationSequence], workers: int = 1, chunk: int = 64
) -> pd.DataFrame:
    """Decoded predictions for every frame, from a frozen eval-mode copy of ``model``."""
    if not sequences:
        raise SequenceError("MSD needs at least one fixation sequence")
    short = [s.sequence_id for s in sequences if len(s) < 2]
    if short:
        raise SequenceError(f"sequences {short} have fewer than two frames")
    frozen = model.snapshot()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _predict_sequence(frozen, s, chunk), sequences))
    else:
        parts = [_predict_sequence(frozen, s, chunk) for s in sequences]
    return pd.concat(parts, ignore_index=True)


def sequence_spread(points: np.ndarray) -> float:
    """sqrt of the mean squared distance of 2-D points to their mean.

    Points are sorted and centered on the first one before averaging, so frame
    order cannot change the result and identical points give exactly 0.
    """
    points = np.asarray(points, dtype=np.float64)
    points = points[np.lexsort((points[:, 1], points[:, 0]))]
    centered = points - points[0]
    deviations = centered - centered.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(deviations * deviations, axis=1))))


def msd_table(predictions: pd.DataFrame) -> pd.DataFrame:
    """Per sequence: frame count, mean prediction and spread sigma."""
    if predictions.empty:
        raise SequenceError("MSD needs at least one fixation sequence")
    rows = []
    for sid, group in predictions.groupby("sequence_id", sort=True):
        points = group[["pred_x", "pred_y"]].to_numpy()
        if len(points) < 2:
            raise SequenceError(f"sequence {sid} has fewer than two frames")
        rows.append({
            "sequence_id": sid,
            "frames": len(points),
            "mean_x": float(points[:, 0].mean()),
            "mean_y": float(points[:, 1].mean()),
            "sigma": sequence_spread(points),
        })
    return pd.DataFrame(rows)


def msd_from_predictions(predictions: pd.DataFrame) -> float:
    return float(msd_table(predictions)["sigma"].mean())


def msd(model: GazeNet, sequences: Sequence[FixationSequence], workers: int = 1) -> float:
    """Mean over sequences of the spread of the model's 2-D predictions (cm)."""
    return msd_from_predictions(sequence_predictions(model, sequences, workers))
