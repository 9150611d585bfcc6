"""Mini-batch SGD with momentum and the per-mini-generation step schedule."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from gazetat.nn import Parameter


class SGD:
    def __init__(self, params: Sequence[Parameter], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v


def epoch_lr(base_lr: float, local_epoch: int, epochs_in_generation: int, decay: float) -> float:
    """Base rate, multiplied by ``decay`` on the last epoch of a mini-generation."""
    return base_lr * decay if local_epoch == epochs_in_generation - 1 else base_lr
