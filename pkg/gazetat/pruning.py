"""Cosine-similarity filter scoring and global capped selection of filters to prune."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd

from gazetat.errors import PruningError
from gazetat.gazenet import GazeNet

logger = logging.getLogger(__name__)


class PruneMetric(str, Enum):
    COSINE = "cosine"
    REPR = "repr"


def _similarities(layer_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(layer_weights, dtype=np.float64)
    if w.ndim < 2 or w.shape[0] < 2:
        raise PruningError(f"need at least two filters to score, got weights of shape {w.shape}")
    flat = w.reshape(w.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    dead = norms == 0
    unit = np.divide(flat, norms[:, None], out=np.zeros_like(flat), where=~dead[:, None])
    sims = unit @ unit.T
    np.fill_diagonal(sims, 0.0)
    return sims, dead


def cosine_scores(layer_weights: np.ndarray) -> np.ndarray:
    """Signed mean cosine similarity of each filter to the others (divided by N_out).

    Zero-norm filters score +1.
    """
    sims, dead = _similarities(layer_weights)
    scores = sims.sum(axis=1) / sims.shape[0]
    scores[dead] = 1.0
    return scores


def repr_scores(layer_weights: np.ndarray) -> np.ndarray:
    """As ``cosine_scores`` with absolute cosine values, so anti-parallel filters count as redundant."""
    sims, dead = _similarities(layer_weights)
    scores = np.abs(sims).sum(axis=1) / sims.shape[0]
    scores[dead] = 1.0
    return scores


SCORERS = {PruneMetric.COSINE: cosine_scores, PruneMetric.REPR: repr_scores}


def score_model(model: GazeNet, metric: Union[PruneMetric, str] = PruneMetric.COSINE) -> "OrderedDict[str, np.ndarray]":
    scorer = SCORERS[PruneMetric(metric)]
    return OrderedDict((name, scorer(unit.conv.weight.data)) for name, unit in model.conv_units().items())


@dataclass
class PruneSelection:
    """Selected (layer_id, filter_index) pairs; layer ids follow the order scores were given in."""

    selected: dict[int, list[int]] = field(default_factory=dict)
    quota: int = 0
    p: float = 0.0
    p_max: float = 0.0

    @property
    def count(self) -> int:
        return sum(len(v) for v in self.selected.values())

    @property
    def shortfall(self) -> int:
        return self.quota - self.count

    def pairs(self) -> list[tuple[int, int]]:
        return sorted((layer, idx) for layer, picks in self.selected.items() for idx in picks)

    def for_layer(self, layer_id: int) -> list[int]:
        return self.selected.get(layer_id, [])


def _floor(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 1e-9))


def select_prune_set(all_scores: Union[Sequence[np.ndarray], Mapping[str, np.ndarray]], p: float, p_max: float) -> PruneSelection:
    """Greedy global selection by descending score under per-layer caps.

    ``p`` and ``p_max`` are fractions. Ties go to the lower layer id, then the
    lower filter index. A layer at its cap is skipped; if caps keep the global
    quota from being met, fewer filters are selected and the shortfall logged.
    """
    if not 0 <= p <= 1 or not 0 <= p_max <= 1:
        raise PruningError(f"prune ratios must lie in [0, 1], got p={p}, p_max={p_max}")
    layers = list(all_scores.values()) if isinstance(all_scores, Mapping) else list(all_scores)
    total = sum(len(s) for s in layers)
    selection = PruneSelection(quota=_floor(p, total), p=p, p_max=p_max)
    if selection.quota == 0:
        return selection
    caps = [_floor(p_max, len(s)) for s in layers]
    candidates = sorted(
        ((float(score), layer, idx) for layer, scores in enumerate(layers) for idx, score in enumerate(scores)),
        key=lambda c: (-c[0], c[1], c[2]),
    )
    admitted = 0
    for _, layer, idx in candidates:
        if admitted == selection.quota:
            break
        picks = selection.selected.setdefault(layer, [])
        if len(picks) >= caps[layer]:
            continue
        picks.append(idx)
        admitted += 1
    selection.selected = {layer: sorted(picks) for layer, picks in selection.selected.items() if picks}
    if selection.shortfall:
        logger.warning("per-layer caps allow only %d of %d filters to be pruned", selection.count, selection.quota)
    return selection


def prune_report(scores: Mapping[str, np.ndarray], selection: PruneSelection) -> pd.DataFrame:
    """One row per filter: layer, filter, score, selected."""
    rows = []
    for layer_id, (name, layer_scores) in enumerate(scores.items()):
        chosen = set(selection.for_layer(layer_id))
        rows.extend((name, idx, float(score), idx in chosen) for idx, score in enumerate(layer_scores))
    return pd.DataFrame(rows, columns=["layer", "filter", "score", "selected"])


def score_histograms(report: pd.DataFrame, bins: int = 10) -> pd.DataFrame:
    """Per-layer histogram of scores over [-1, 1]."""
    edges = np.linspace(-1.0, 1.0, bins + 1)
    rows = []
    for layer, group in report.groupby("layer", sort=False):
        counts, _ = np.histogram(group["score"].clip(-1.0, 1.0), bins=edges)
        rows.extend((layer, lo, hi, int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts))
    return pd.DataFrame(rows, columns=["layer", "bin_lo", "bin_hi", "count"])
