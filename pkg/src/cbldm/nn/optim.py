from __future__ import annotations

import numpy as np


class AdamW:
    """Adam with decoupled weight decay, applied in place to parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _check(self, grads):
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient; aborting optimizer step")

    def step(self, grads):
        self._check(grads)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (self.lr * update).astype(p.dtype, copy=False)

    def state_arrays(self):
        return {"m": self.m, "v": self.v, "step": self.step_count}


class Adan:
    """Adaptive Nesterov momentum (Adan) with decoupled weight decay.

    Optional alternative to :class:`AdamW` for the two autoencoders.
    """

    def __init__(self, params, lr=1e-3, betas=(0.98, 0.92, 0.99), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.beta3 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.n = [np.zeros_like(p.data) for p in self.params]
        self.prev = [None for _ in self.params]

    _check = AdamW._check

    def step(self, grads):
        self._check(grads)
        self.step_count += 1
        t = self.step_count
        b1, b2, b3 = self.beta1, self.beta2, self.beta3
        c1, c2, c3 = 1 - b1 ** t, 1 - b2 ** t, 1 - b3 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            diff = np.zeros_like(g) if self.prev[i] is None else g - self.prev[i]
            self.prev[i] = g.copy()
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * diff
            gg = g + b2 * diff
            self.n[i] = b3 * self.n[i] + (1 - b3) * gg * gg
            step = (self.m[i] / c1 + b2 * self.v[i] / c2) / (np.sqrt(self.n[i] / c3) + self.eps)
            p.data -= (self.lr * step).astype(p.dtype, copy=False)
            if self.weight_decay:
                p.data /= 1.0 + self.lr * self.weight_decay


def make_optimizer(name, params, lr, weight_decay=0.0):
    if name == "adamw":
        return AdamW(params, lr=lr, weight_decay=weight_decay)
    if name == "adan":
        return Adan(params, lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")
