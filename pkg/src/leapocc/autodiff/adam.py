"""Adam with bias correction over a :class:`ParameterStore`."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Update every trainable parameter in place, then clear its gradient.

    Parameters without a gradient are treated as having a zero gradient, so
    their moments decay and their step counters still advance.
    """
    for name, p in store.params.items():
        if not p.requires_grad:
            continue
        g = p.grad_or_zeros()
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        if name not in store.adam_m:
            store.adam_m[name] = np.zeros_like(p.data)
            store.adam_v[name] = np.zeros_like(p.data)
            store.adam_t[name] = 0
        m, v = store.adam_m[name], store.adam_v[name]
        t = store.adam_t[name] = store.adam_t[name] + 1
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = lr / (1.0 - beta1**t)
        denom = np.sqrt(v / (1.0 - beta2**t)) + eps
        p.data -= (step * m / denom).astype(p.dtype)
        p.grad = None


class Adam:
    """Adam over plain named arrays (used for small free variables such as a translation)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)
