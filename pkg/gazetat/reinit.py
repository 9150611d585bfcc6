"""Re-initialization of pruned filters.

The default mode assigns every pruned filter of a layer a row of an orthonormal
basis scaled by one scalar drawn from the range of the pruned filters'
BN-adjusted norms, then resets the BN channels behind those filters. The
``orth_raw``, ``uniform`` and ``scratch`` modes are the ablation baselines.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
import pandas as pd

from gazetat.errors import ReinitError
from gazetat.gazenet import GazeNet
from gazetat.nn import fan_in_uniform
from gazetat.pruning import PruneSelection

logger = logging.getLogger(__name__)

BN_EPS = 1e-5


class ReinitMode(str, Enum):
    AOI = "aoi"
    ORTH_RAW = "orth_raw"
    UNIFORM = "uniform"
    SCRATCH = "scratch"


def filter_norms(layer_weights: np.ndarray, indices) -> np.ndarray:
    w = np.asarray(layer_weights, dtype=np.float64)
    return np.linalg.norm(w[np.asarray(indices, dtype=np.int64)].reshape(len(indices), -1), axis=1)


def bn_adjusted_norms(layer_weights, bn_scale, bn_var, pruned_indices, eps: float = BN_EPS) -> np.ndarray:
    """``||W_fi * scale_fi / sqrt(var_fi + eps)||`` for each pruned filter."""
    idx = np.asarray(pruned_indices, dtype=np.int64)
    var = np.asarray(bn_var, dtype=np.float64)[idx]
    if np.any(var <= 0):
        raise ReinitError(f"non-positive BN variance for filters {idx[var <= 0].tolist()}")
    factor = np.abs(np.asarray(bn_scale, dtype=np.float64)[idx]) / np.sqrt(var + eps)
    return filter_norms(layer_weights, idx) * factor


def orthogonal_basis(layer_weights, n_pruned: int, rng: np.random.Generator, pruned_indices=None) -> np.ndarray:
    """``n_pruned`` orthonormal rows in the flattened filter space.

    The QR factorization starts from the pruned filters (or the first
    ``n_pruned`` filters) plus a Gaussian completion, so rank-deficient weights
    still give a full basis. Rows past the flattened dimension are normalized
    Gaussian vectors and are not orthogonal to the rest.
    """
    w = np.asarray(layer_weights, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    dim = flat.shape[1]
    if n_pruned <= 0:
        return np.zeros((0, dim))
    seed_rows = flat[np.asarray(pruned_indices, dtype=np.int64)] if pruned_indices is not None else flat[:n_pruned]
    n_orth = min(n_pruned, dim)
    scale = float(np.std(flat)) or 1.0
    start = rng.normal(0.0, scale, size=(dim, n_orth))
    k = min(len(seed_rows), n_orth)
    start[:, :k] += seed_rows[:k].T
    q, r = np.linalg.qr(start)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    basis = (q * signs).T
    if n_pruned > dim:
        logger.warning("%d filters to re-initialize exceed the %d-dim filter space; extra rows are Gaussian", n_pruned, dim)
        extra = rng.normal(size=(n_pruned - dim, dim))
        basis = np.vstack([basis, extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    return basis


@dataclass
class LayerPlan:
    layer_id: int
    name: str
    n_filters: int
    pruned: list[int]
    basis: np.ndarray
    raw_norms: np.ndarray
    adjusted_norms: np.ndarray
    # set when every pruned filter is dead: the kept filters' adjusted norms give the range instead
    fallback_norms: Optional[np.ndarray] = None

    @property
    def scalar_range(self) -> tuple[float, float]:
        norms = self.adjusted_norms if self.fallback_norms is None else self.fallback_norms
        if not len(norms):
            return 0.0, 0.0
        return float(norms.min()), float(norms.max())


@dataclass
class ReinitPlan:
    layers: list[LayerPlan]

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def n_pruned(self) -> int:
        return sum(len(layer.pruned) for layer in self.layers)


def _kept_norms(name: str, unit, pruned: list[int]) -> np.ndarray:
    """Positive BN-adjusted norms of the filters outside ``pruned``; used when every pruned filter is dead."""
    bn, dropped = unit.bn, set(pruned)
    usable = [i for i in range(unit.conv.weight.shape[0]) if i not in dropped and bn.running_var[i] > 0]
    norms = np.zeros(0)
    if usable:
        norms = bn_adjusted_norms(unit.conv.weight.data, bn.weight.data, bn.running_var, usable, bn.eps)
    norms = norms[norms > 0]
    if len(norms):
        logger.warning("%s: all %d pruned filters are dead; scaling from the kept filters' norms [%.4g, %.4g]",
                       name, len(pruned), norms.min(), norms.max())
    else:
        logger.warning("%s: every filter is dead; re-initialized filters stay zero", name)
    return norms


def plan_reinit(model: GazeNet, selection: PruneSelection, rng: np.random.Generator) -> ReinitPlan:
    """Bases and norm ranges for every layer with selected filters, from the current parameters."""
    layers = []
    for layer_id, (name, unit) in enumerate(model.conv_units().items()):
        pruned = selection.for_layer(layer_id)
        if not pruned:
            continue
        weights = unit.conv.weight.data
        adjusted = bn_adjusted_norms(weights, unit.bn.weight.data, unit.bn.running_var, pruned, unit.bn.eps)
        layers.append(LayerPlan(
            layer_id=layer_id,
            name=name,
            n_filters=weights.shape[0],
            pruned=list(pruned),
            basis=orthogonal_basis(weights, len(pruned), rng, pruned),
            raw_norms=filter_norms(weights, pruned),
            adjusted_norms=adjusted,
            fallback_norms=None if adjusted.max() > 0 else _kept_norms(name, unit, pruned),
        ))
    return ReinitPlan(layers)


def _assign(unit, pruned: list[int], rows: np.ndarray) -> None:
    weight = unit.conv.weight
    weight.data[pruned] = rows.reshape((len(pruned),) + weight.shape[1:]).astype(weight.dtype)
    unit.bn.reset_channels(pruned)


def align_and_assign(model: GazeNet, plan: ReinitPlan, rng: np.random.Generator, per_filter: bool = False) -> dict[str, float]:
    """Write scaled basis rows into the pruned filters; returns the scalar used per layer.

    With ``per_filter`` every filter draws its own scalar from the layer's range
    and the returned value is their mean.
    """
    units = model.conv_units()
    scalars = {}
    for layer in plan.layers:
        lo, hi = layer.scalar_range
        n = len(layer.pruned)
        draws = rng.uniform(lo, hi, size=n if per_filter else 1) if hi > lo else np.full(1, lo)
        unit_rows = layer.basis / np.linalg.norm(layer.basis, axis=1, keepdims=True)
        _assign(units[layer.name], layer.pruned, unit_rows * draws.reshape(-1, 1))
        scalars[layer.name] = float(draws.mean())
    return scalars


def variant_reinit(
    model: GazeNet,
    plan: Optional[ReinitPlan],
    mode: Union[ReinitMode, str],
    rng: np.random.Generator,
) -> None:
    """Ablation re-initializations: unscaled orthogonal rows, fan-in uniform, or every parameter."""
    mode = ReinitMode(mode)
    if mode is ReinitMode.SCRATCH:
        model.reset_parameters(rng)
        return
    if mode is ReinitMode.AOI:
        raise ReinitError("use align_and_assign for aligned orthogonal re-initialization")
    units = model.conv_units()
    for layer in plan.layers if plan is not None else []:
        unit = units[layer.name]
        if mode is ReinitMode.ORTH_RAW:
            rows = layer.basis / np.linalg.norm(layer.basis, axis=1, keepdims=True)
        else:
            shape = (len(layer.pruned),) + unit.conv.weight.shape[1:]
            rows = fan_in_uniform(shape, rng).reshape(len(layer.pruned), -1)
        _assign(unit, layer.pruned, rows)


def reinit(model: GazeNet, plan: ReinitPlan, mode: Union[ReinitMode, str], rng: np.random.Generator,
           per_filter: bool = False) -> dict[str, float]:
    mode = ReinitMode(mode)
    if mode is ReinitMode.AOI:
        return align_and_assign(model, plan, rng, per_filter)
    variant_reinit(model, plan, mode, rng)
    return {}


def reinit_report(model: GazeNet, plan: ReinitPlan, scalars: dict[str, float]) -> pd.DataFrame:
    """Per layer: pruned count and the ranges of raw, BN-adjusted and new filter norms."""
    units = model.conv_units()
    rows = []
    for layer in plan.layers:
        new = filter_norms(units[layer.name].conv.weight.data, layer.pruned)
        rows.append({
            "layer": layer.name,
            "n_filters": layer.n_filters,
            "n_pruned": len(layer.pruned),
            "raw_min": float(layer.raw_norms.min()),
            "raw_max": float(layer.raw_norms.max()),
            "adj_min": layer.scalar_range[0],
            "adj_max": layer.scalar_range[1],
            "new_min": float(new.min()),
            "new_max": float(new.max()),
            "scalar": scalars.get(layer.name, float("nan")),
        })
    return pd.DataFrame(rows, columns=[
        "layer", "n_filters", "n_pruned", "raw_min", "raw_max", "adj_min", "adj_max", "new_min", "new_max", "scalar",
    ])
