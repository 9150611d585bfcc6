"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from gazetat.tensor import Function, Tape, Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool
    reason: str = ""
    skipped: int = 0


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.passed]

    def error_for(self, name: str) -> float:
        return next(e.max_rel_error for e in self.entries if e.name == name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(e) for e in self.entries])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise gap, relative to the largest gradient magnitude present."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def _pick(size: int, max_elements: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_elements is None or size <= max_elements:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_elements, replace=False))


def _entry(name: str, analytic: np.ndarray, numeric: np.ndarray, tolerance: float, skipped: int = 0) -> GradCheckEntry:
    if skipped and not analytic.size:
        return GradCheckEntry(name, 0.0, True, "every element straddles a kink", skipped)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        return GradCheckEntry(name, float("inf"), False, "non-finite gradient", skipped)
    err = relative_error(analytic, numeric)
    return GradCheckEntry(name, err, err <= tolerance, "" if err <= tolerance else "exceeds tolerance", skipped)


def _kink_signature(loss: Tensor) -> bytes:
    """Which side of every ReLU / clip boundary each element sits on, in tape order."""
    tape = Tape.record(loss)
    try:
        masks = [getattr(fn, "mask", getattr(fn, "inside", None)) for fn in tape.functions]
        return b"".join(np.packbits(m).tobytes() for m in masks if m is not None)
    finally:
        tape.clear()


def _evaluate(fragment, skip_kinks: bool) -> tuple[float, Optional[bytes]]:
    if not skip_kinks:
        with no_grad():
            return fragment().item(), None
    loss = fragment()
    return loss.item(), _kink_signature(loss)


def _check_parameters(fragment, named, tolerance, step, max_elements, rng, skip_kinks) -> list[GradCheckEntry]:
    for tensor in named.values():
        tensor.data = np.ascontiguousarray(tensor.data)
        tensor.grad = None
    loss = fragment()
    base = _kink_signature(fragment()) if skip_kinks else None
    loss.backward()
    entries = []
    for name, tensor in named.items():
        analytic_full = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        picked = _pick(flat.size, max_elements, rng)
        numeric = np.empty(picked.size)
        smooth = np.ones(picked.size, dtype=bool)
        for slot, i in enumerate(picked):
            original = flat[i]
            flat[i] = original + step
            plus, sig_plus = _evaluate(fragment, skip_kinks)
            flat[i] = original - step
            minus, sig_minus = _evaluate(fragment, skip_kinks)
            flat[i] = original
            numeric[slot] = (plus - minus) / (2 * step)
            smooth[slot] = sig_plus == base and sig_minus == base
        analytic = analytic_full.reshape(-1)[picked]
        entries.append(_entry(name, analytic[smooth], numeric[smooth], tolerance, int((~smooth).sum())))
        tensor.grad = None
    return entries


def _check_function(fn: Function, arrays: Sequence[np.ndarray], tolerance, step, max_elements, rng) -> list[GradCheckEntry]:
    checked = fn.fresh()
    out = checked.forward(*arrays)
    upstream = rng.standard_normal(out.shape)
    analytic = checked.backward(upstream)
    entries = []
    for index, (array, grad) in enumerate(zip(arrays, analytic)):
        if grad is None or not np.issubdtype(array.dtype, np.floating):
            continue
        work = [a.copy() for a in arrays]
        flat = work[index].reshape(-1)
        picked = _pick(flat.size, max_elements, rng)
        numeric = np.empty(picked.size)
        for slot, i in enumerate(picked):
            original = flat[i]
            flat[i] = original + step
            plus = float(np.sum(upstream * fn.fresh().forward(*work)))
            flat[i] = original - step
            minus = float(np.sum(upstream * fn.fresh().forward(*work)))
            flat[i] = original
            numeric[slot] = (plus - minus) / (2 * step)
        entries.append(_entry(f"{fn.name}[{index}]", np.asarray(grad).reshape(-1)[picked], numeric, tolerance))
    return entries


def grad_check(
    fragment: Callable[[], Tensor],
    params: Union[Mapping[str, Tensor], Sequence[Tensor]],
    tolerance: float = 1e-5,
    step: float = 1e-5,
    max_elements: Optional[int] = None,
    check_ops: bool = True,
    seed: int = 0,
    skip_kinks: bool = True,
) -> GradCheckReport:
    """Compare analytic gradients of ``fragment()`` against central differences.

    ``fragment`` must rebuild the scalar loss from scratch on every call and be
    deterministic. Entries are reported per parameter and, with ``check_ops``, per
    recorded op input (named ``"<op>[<input index>]"``) so a broken gradient rule
    is pinned to the op that owns it.

    With ``skip_kinks`` a parameter element whose +-step evaluations flip any
    ReLU or clip boundary is left out of the comparison and counted in
    ``skipped``.
    """
    named = dict(params) if isinstance(params, Mapping) else {
        (t.name or f"param{i}"): t for i, t in enumerate(params)
    }
    for name, tensor in named.items():
        if tensor.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 tensors; {name} is {tensor.dtype}")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    report.entries.extend(_check_parameters(fragment, named, tolerance, step, max_elements, rng, skip_kinks))
    if check_ops:
        tape = Tape.record(fragment())
        try:
            for fn in tape.functions:
                arrays = [t.data for t in fn.inputs]
                report.entries.extend(_check_function(fn, arrays, tolerance, step, max_elements, rng))
        finally:
            tape.clear()
    for failure in report.failures():
        logger.warning("gradient check failed for %s: rel error %.3g (%s)", failure.name, failure.max_rel_error, failure.reason)
    return report
