"""Parameter containers and the layers GazeNet is built from."""
from __future__ import annotations

import copy
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from gazetat import ops
from gazetat.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


def fan_in_uniform(shape: tuple[int, ...], rng: np.random.Generator, gain: float = np.sqrt(2.0)) -> np.ndarray:
    """He-style uniform init: U(-b, b) with b = gain * sqrt(3 / fan_in)."""
    bound = fan_in_bound(shape, gain)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def fan_in_bound(shape: tuple[int, ...], gain: float = np.sqrt(2.0)) -> float:
    return float(gain * np.sqrt(3.0 / int(np.prod(shape[1:]))))


class Module:
    """Registers Parameters, sub-Modules and numpy buffers in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, param in self._params.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{name}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, module in self._modules.items():
            yield from module.named_modules(f"{prefix}{name}.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(state)
        unexpected = set(state) - set(expected)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        params = dict(self.named_parameters())
        for name, value in state.items():
            if value.shape != expected[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {expected[name].shape}")
            if name in params:
                params[name].data = np.array(value, copy=True)
            else:
                owner_path, _, attr = name.rpartition(".")
                owner = dict(self.named_modules())[owner_path]
                object.__setattr__(owner, attr, np.array(value, copy=True))

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def snapshot(self) -> "Module":
        """Deep copy in eval mode with every parameter frozen."""
        clone = copy.deepcopy(self)
        clone.eval()
        for p in clone.parameters():
            p.requires_grad = False
            p.grad = None
        return clone

    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for _, module in self._modules.items():
            module.reset_parameters(rng)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride, self.padding = stride, kernel // 2
        self.weight = Parameter(np.zeros((out_channels, in_channels, kernel, kernel)), name="weight")
        self.reset_parameters(rng)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.weight.data = fan_in_uniform(self.weight.shape, rng)

    def forward(self, x):
        return ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Running stats follow ``running = momentum * running + (1 - momentum) * batch``."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels), name="weight")
        self.bias = Parameter(np.zeros(channels), name="bias")
        self.register_buffer("running_mean", np.zeros(channels, dtype=get_default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=get_default_dtype()))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.reset_channels(np.arange(self.weight.shape[0]))

    def reset_channels(self, channels) -> None:
        self.weight.data[channels] = 1.0
        self.bias.data[channels] = 0.0
        self.running_mean[channels] = 0.0
        self.running_var[channels] = 1.0

    def forward(self, x):
        out, fn = ops.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            training=self.training, eps=self.eps,
        )
        if self.training:
            m = x.size // x.shape[1]
            unbiased = fn.batch_var * (m / max(m - 1, 1))
            self.running_mean *= self.momentum
            self.running_mean += (1 - self.momentum) * fn.batch_mean
            self.running_var *= self.momentum
            self.running_var += (1 - self.momentum) * unbiased
        return out


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, gain: float = np.sqrt(2.0)):
        super().__init__()
        self.gain = gain
        self.weight = Parameter(np.zeros((out_features, in_features)), name="weight")
        self.bias = Parameter(np.zeros(out_features), name="bias")
        self.reset_parameters(rng)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        self.weight.data = fan_in_uniform(self.weight.shape, rng, self.gain)
        self.bias.data = np.zeros_like(self.bias.data)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class ConvBNReLU(Module):
    """conv -> batchnorm -> relu; the unit pruning and re-initialization operate on."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, rng: np.random.Generator,
                 bn_momentum: float = 0.9, bn_eps: float = 1e-5):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel, stride, rng)
        self.bn = BatchNorm(out_channels, bn_momentum, bn_eps)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)

    def forward(self, x):
        for layer in self:
            x = layer(x)
        return x
