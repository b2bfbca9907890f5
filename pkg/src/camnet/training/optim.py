"""Optimisers over lists of Parameters. Frozen parameters are never touched."""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, params, lr):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if not p.trainable or p.grad is None:
                continue
            self._update(p, p.grad.astype(p.data.dtype, copy=False))

    def _update(self, p, g):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    def __init__(self, params, lr=0.01, momentum=0.9):
        super().__init__(params, lr)
        self.momentum = momentum

    def _update(self, p, g):
        v = self.state.get(id(p))
        v = g.copy() if v is None else self.momentum * v + g
        self.state[id(p)] = v
        p.data -= (self.lr * v).astype(p.data.dtype)


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps

    def _update(self, p, g):
        st = self.state.get(id(p))
        if st is None:
            st = self.state[id(p)] = {"t": 0, "m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
        st["t"] += 1
        t = st["t"]
        st["m"] = self.b1 * st["m"] + (1 - self.b1) * g
        st["v"] = self.b2 * st["v"] + (1 - self.b2) * g * g
        mhat = st["m"] / (1 - self.b1 ** t)
        vhat = st["v"] / (1 - self.b2 ** t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def make_optimizer(name, params, lr, momentum=0.9, betas=(0.9, 0.999)):
    if name == "adam":
        return Adam(params, lr, betas)
    if name in ("sgd", "sgd_momentum"):
        return SGDMomentum(params, lr, momentum)
    raise ValueError(f"unknown optimizer {name!r}")
