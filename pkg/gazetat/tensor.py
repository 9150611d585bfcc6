"""Reverse-mode differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray. Every primitive op is a ``Function`` instance that
runs ``forward`` on raw arrays and, when any input requires a gradient, links the
output back to itself. ``backward`` records a ``Tape`` (the ops reachable from the
root, in execution order), replays it in reverse, and then clears it so no graph
outlives the optimization step that built it.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from typing import Iterator, Optional, Sequence

import numpy as np

from gazetat.errors import GradientError

logger = logging.getLogger(__name__)

_local = threading.local()
_default_dtype = np.dtype(np.float64)


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype}; use float32 or float64")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Function:
    """One primitive op. Subclasses implement ``forward`` on arrays and
    ``backward``, which returns one gradient (or None) per input."""

    name = "op"

    def __init__(self, **params):
        self.params = params
        self.inputs: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    def fresh(self) -> "Function":
        return type(self)(**self.params)

    def __call__(self, *inputs) -> "Tensor":
        tensors = tuple(x if isinstance(x, Tensor) else Tensor(x) for x in inputs)
        data = self.forward(*(t.data for t in tensors))
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        out = Tensor(data, requires_grad=requires_grad)
        if requires_grad:
            self.inputs = tensors
            out._ctx = self
        return out

    @classmethod
    def apply(cls, *inputs, **params) -> "Tensor":
        return cls(**params)(*inputs)

    def __repr__(self) -> str:
        return f"<{self.name}>"


class Tensor:
    # ndarray <op> Tensor defers to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            array = data
        else:
            array = np.asarray(data, dtype=_default_dtype)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional[Function] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __neg__(self):
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __getitem__(self, key):
        return ops.getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def relu(self):
        return ops.relu(self)

    def sigmoid(self):
        return ops.sigmoid(self)

    def log(self):
        return ops.log(self)


class Tape:
    """Ordered record of the ops that produced ``root`` (inputs before outputs)."""

    def __init__(self, root: Tensor, outputs: list[Tensor]):
        self.root = root
        self.outputs = outputs

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if tensor._ctx is None:
                continue
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor._ctx.inputs:
                if parent._ctx is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(root, order)

    def __len__(self) -> int:
        return len(self.outputs)

    @property
    def functions(self) -> list[Function]:
        return [t._ctx for t in self.outputs]

    def op_names(self) -> list[str]:
        return [fn.name for fn in self.functions]

    def replay(self, seed: np.ndarray) -> dict[int, tuple[Tensor, np.ndarray]]:
        """Propagate ``seed`` from the root; returns gradients of every leaf that
        requires one, keyed by ``id``."""
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        leaves: dict[int, Tensor] = {}
        if self.root._ctx is None:
            leaves[id(self.root)] = self.root
        for out in reversed(self.outputs):
            grad = grads.pop(id(out), None)
            if grad is None:
                continue
            fn = out._ctx
            for tensor, g in zip(fn.inputs, fn.backward(grad)):
                if g is None or not tensor.requires_grad:
                    continue
                if g.shape != tensor.shape:
                    raise GradientError(
                        f"{fn.name}: gradient shape {g.shape} does not match input {tensor.shape}"
                    )
                key = id(tensor)
                grads[key] = grads[key] + g if key in grads else g
                if tensor._ctx is None:
                    leaves[key] = tensor
        return {key: (tensor, grads[key]) for key, tensor in leaves.items() if key in grads}

    def clear(self) -> None:
        for out in self.outputs:
            fn = out._ctx
            if fn is not None:
                fn.inputs = ()
            out._ctx = None
        self.outputs = []


def _seed_for(root: Tensor) -> np.ndarray:
    if root._ctx is None and not root.requires_grad:
        raise GradientError("backward called on a tensor that is not part of any recorded graph")
    if root.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {root.shape}")
    return np.ones_like(root.data)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring a gradient."""
    seed = _seed_for(root)
    tape = Tape.record(root)
    try:
        for tensor, grad in tape.replay(seed).values():
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad
    finally:
        tape.clear()


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``root`` with respect to ``wrt`` only; ``.grad`` fields are not touched."""
    seed = _seed_for(root)
    tape = Tape.record(root)
    try:
        found = tape.replay(seed)
    finally:
        tape.clear()
    return [found[id(t)][1] if id(t) in found else np.zeros_like(t.data) for t in wrt]


from gazetat import ops  # noqa: E402
