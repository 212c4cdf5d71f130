"""Gradient-ascent optimizers over named parameter dicts."""

from __future__ import annotations

import numpy as np


class SGD:
    """Plain stochastic gradient ascent with a constant step size."""

    def __init__(self, params, lr):
        self.params = params
        self.lr = float(lr)

    def step(self, grads):
        if self.lr == 0.0:
            return
        for name, p in self.params.items():
            g = grads.get(name)
            if g is not None:
                p.data = p.data + self.lr * g


class Adam:
    """Adaptive moment estimation (ascent form), constant step size."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads):
        if self.lr == 0.0:
            return
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p.data = p.data + self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def make_optimizer(kind, params, lr):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
