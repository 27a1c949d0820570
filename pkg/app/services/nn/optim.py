from __future__ import annotations

import numpy as np

from app.core.errors import InvalidArgumentError


class SGD:
    def __init__(self, lr: float):
        if lr < 0:
            raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.steps = 0

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.steps += 1
        for key, g in grads.items():
            arrays[key] -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for key, g in grads.items():
            m = self._m.setdefault(key, np.zeros_like(g))
            v = self._v.setdefault(key, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arrays[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float, betas: tuple[float, float] = (0.9, 0.999)):
    if name == "adam":
        return Adam(lr, betas)
    if name == "sgd":
        return SGD(lr)
    raise InvalidArgumentError(f"unknown optimizer {name!r}")
