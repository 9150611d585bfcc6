"""Primitive ops and their gradient rules.

Each primitive is a ``Function`` subclass; the lowercase wrappers at the bottom are
what models and losses call.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gazetat.errors import ShapeError
from gazetat.tensor import Function, Tensor


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


class Add(Function):
    name = "add"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    name = "div"

    def forward(self, x, y):
        _broadcast_shape(self.name, x, y)
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        gx = grad / self.y
        gy = -grad * self.x / (self.y * self.y)
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


class Log(Function):
    name = "log"

    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        z = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
        self.out = out
        return out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Clip(Function):
    name = "clip"

    def forward(self, x):
        lo, hi = self.params["lo"], self.params["hi"]
        self.inside = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi)

    def backward(self, grad):
        return (grad * self.inside,)


class MatMul(Function):
    name = "matmul"

    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeError(self.name, f"cannot multiply {x.shape} by {y.shape}")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        return grad @ self.y.T, self.x.T @ grad


class Linear(Function):
    """``x @ w.T + b`` with ``w`` shaped (out_features, in_features)."""

    name = "linear"

    def forward(self, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeError(self.name, f"input {x.shape} does not match weight {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(self.name, f"bias {b.shape} does not match weight {w.shape}")
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad):
        return grad @ self.w, grad.T @ self.x, grad.sum(axis=0)


class Conv2d(Function):
    """Cross-correlation of (N, C, H, W) inputs with (O, C, kh, kw) kernels, via im2col."""

    name = "conv2d"

    def forward(self, x, w):
        stride, pad = self.params.get("stride", 1), self.params.get("padding", 0)
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(self.name, f"expected 4-D input and kernel, got {x.shape} and {w.shape}")
        n, c, h, wd = x.shape
        o, cw, kh, kw = w.shape
        if c != cw:
            raise ShapeError(self.name, f"input has {c} channels, kernel expects {cw}")
        if h + 2 * pad < kh or wd + 2 * pad < kw:
            raise ShapeError(self.name, f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        self.cols, self.w = cols, w
        self.x_shape, self.out_hw = x.shape, (ho, wo)
        out = cols @ w.reshape(o, -1).T
        return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(self, grad):
        stride, pad = self.params.get("stride", 1), self.params.get("padding", 0)
        n, c, h, wd = self.x_shape
        o, _, kh, kw = self.w.shape
        ho, wo = self.out_hw
        g = grad.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        dw = (g.T @ self.cols).reshape(self.w.shape)
        dcols = (g @ self.w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw


class BatchNorm(Function):
    """Per-channel normalization over (N,) or (N, H, W) followed by scale and shift.

    Training mode normalizes with batch statistics and exposes them as
    ``batch_mean`` / ``batch_var``; eval mode uses the ``running_mean`` /
    ``running_var`` params.
    """

    name = "batchnorm"

    def forward(self, x, gamma, beta):
        if x.ndim not in (2, 4):
            raise ShapeError(self.name, f"expected (N, C) or (N, C, H, W) input, got {x.shape}")
        channels = x.shape[1]
        if gamma.shape != (channels,) or beta.shape != (channels,):
            raise ShapeError(self.name, f"scale {gamma.shape} / shift {beta.shape} do not match {channels} channels")
        self.axes = (0,) if x.ndim == 2 else (0, 2, 3)
        self.bshape = (1, channels) if x.ndim == 2 else (1, channels, 1, 1)
        eps = self.params.get("eps", 1e-5)
        if self.params.get("training", True):
            if x.size // channels < 2:
                raise ShapeError(self.name, "training mode needs more than one value per channel")
            mean, var = x.mean(axis=self.axes), x.var(axis=self.axes)
        else:
            mean = np.asarray(self.params["running_mean"], dtype=x.dtype)
            var = np.asarray(self.params["running_var"], dtype=x.dtype)
        self.batch_mean, self.batch_var = mean, var
        self.inv = (1.0 / np.sqrt(var + eps)).reshape(self.bshape)
        self.xhat = (x - mean.reshape(self.bshape)) * self.inv
        self.gamma = gamma
        return gamma.reshape(self.bshape) * self.xhat + beta.reshape(self.bshape)

    def backward(self, grad):
        dgamma = (grad * self.xhat).sum(axis=self.axes)
        dbeta = grad.sum(axis=self.axes)
        g = grad * self.gamma.reshape(self.bshape)
        if self.params.get("training", True):
            m = g.size / g.shape[1]
            dx = (self.inv / m) * (
                m * g
                - g.sum(axis=self.axes, keepdims=True)
                - self.xhat * (g * self.xhat).sum(axis=self.axes, keepdims=True)
            )
        else:
            dx = g * self.inv
        return dx, dgamma, dbeta


class Concat(Function):
    name = "concat"

    def forward(self, *xs):
        axis = self.params.get("axis", 0)
        try:
            out = np.concatenate(xs, axis=axis)
        except ValueError:
            raise ShapeError(self.name, f"cannot concatenate shapes {[x.shape for x in xs]} on axis {axis}") from None
        self.splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return out

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.params.get("axis", 0)))


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        grad = np.expand_dims(grad, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(grad, shape)


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(axis=self.params.get("axis"), keepdims=self.params.get("keepdims", False)))

    def backward(self, grad):
        return (_expand_reduced(grad, self.shape, self.params.get("axis"), self.params.get("keepdims", False)).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x):
        self.shape = x.shape
        out = np.asarray(x.mean(axis=self.params.get("axis"), keepdims=self.params.get("keepdims", False)))
        self.count = x.size // max(out.size, 1)
        return out

    def backward(self, grad):
        g = _expand_reduced(grad, self.shape, self.params.get("axis"), self.params.get("keepdims", False))
        return (g / self.count,)


class Reshape(Function):
    name = "reshape"

    def forward(self, x):
        self.shape = x.shape
        try:
            return x.reshape(self.params["shape"])
        except ValueError:
            raise ShapeError(self.name, f"cannot reshape {x.shape} into {self.params['shape']}") from None

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class GetItem(Function):
    """Basic (slice / integer) indexing."""

    name = "getitem"

    def forward(self, x):
        self.shape = x.shape
        return x[self.params["key"]]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[self.params["key"]] = grad
        return (out,)


class Take(Function):
    """Gather along ``axis`` by an integer index array (repeats allowed)."""

    name = "take"

    def forward(self, x):
        axis = self.params.get("axis", 0)
        self.shape = x.shape
        return np.take(x, self.params["indices"], axis=axis)

    def backward(self, grad):
        axis = self.params.get("axis", 0)
        out = np.zeros(self.shape, dtype=grad.dtype)
        index = [slice(None)] * len(self.shape)
        index[axis] = np.asarray(self.params["indices"])
        np.add.at(out, tuple(index), grad)
        return (out,)


def _operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a, b) -> Tensor:
    return Add()(*_operands(a, b))


def sub(a, b) -> Tensor:
    return Sub()(*_operands(a, b))


def mul(a, b) -> Tensor:
    return Mul()(*_operands(a, b))


def div(a, b) -> Tensor:
    return Div()(*_operands(a, b))


def log(x) -> Tensor:
    return Log()(x)


def relu(x) -> Tensor:
    return ReLU()(x)


def sigmoid(x) -> Tensor:
    return Sigmoid()(x)


def clip(x, lo: float, hi: float) -> Tensor:
    return Clip(lo=lo, hi=hi)(x)


def matmul(a, b) -> Tensor:
    return MatMul()(*_operands(a, b))


def linear(x, weight, bias) -> Tensor:
    return Linear()(x, weight, bias)


def conv2d(x, weight, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d(stride=stride, padding=padding)(x, weight)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    eps: float = 1e-5,
) -> tuple[Tensor, BatchNorm]:
    """Returns the output and the op, whose ``batch_mean`` / ``batch_var`` feed running stats."""
    fn = BatchNorm(training=training, eps=eps, running_mean=running_mean, running_var=running_var)
    return fn(x, gamma, beta), fn


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    return Concat(axis=axis)(*xs)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum(axis=axis, keepdims=keepdims)(x)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return Mean(axis=axis, keepdims=keepdims)(x)


def reshape(x, shape) -> Tensor:
    return Reshape(shape=tuple(shape))(x)


def getitem(x, key) -> Tensor:
    return GetItem(key=key)(x)


def take(x, indices, axis: int = 0) -> Tensor:
    return Take(indices=np.asarray(indices), axis=axis)(x)
