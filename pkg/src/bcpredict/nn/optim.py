"""In-place first-order optimizers over a list of parameter arrays."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr: float = 0.1):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adadelta:
    def __init__(self, lr: float = 1.0, rho: float = 0.95, eps: float = 1e-6):
        self.lr, self.rho, self.eps = lr, rho, eps
        self._sq = None
        self._upd = None

    def step(self, params, grads):
        if self._sq is None:
            self._sq = [np.zeros_like(p) for p in params]
            self._upd = [np.zeros_like(p) for p in params]
        for p, g, sq, upd in zip(params, grads, self._sq, self._upd):
            sq *= self.rho
            sq += (1 - self.rho) * g * g
            delta = np.sqrt(upd + self.eps) / np.sqrt(sq + self.eps) * g
            upd *= self.rho
            upd += (1 - self.rho) * delta * delta
            p -= self.lr * delta


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = None
        self._v = None

    def step(self, params, grads):
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float | None = None):
    if name == "sgd":
        return SGD() if lr is None else SGD(lr)
    if name == "adadelta":
        return Adadelta() if lr is None else Adadelta(lr=lr)
    if name == "adam":
        return Adam() if lr is None else Adam(lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
