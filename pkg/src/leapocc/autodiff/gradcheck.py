"""Central finite differences against the tape."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Tape, Value, backward


def numerical_grad(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5,
                   indices=None) -> np.ndarray:
    """Central-difference gradient of ``fn()`` w.r.t. ``array`` (perturbed in place).

    With ``indices`` (flat positions) only those entries are evaluated; the
    result then has one entry per index.
    """
    flat = array.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out.append((fp - fm) / (2.0 * h))
    out = np.asarray(out)
    return out.reshape(array.shape) if indices is None else out


def rel_error(analytic, numeric, floor: float = 1e-10) -> np.ndarray:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def tape_grads(fn: Callable[[], Value], leaves: list[Value]) -> list[np.ndarray]:
    """Run ``fn`` on a fresh tape and return the gradients of ``leaves``."""
    for v in leaves:
        v.grad = None
    with Tape() as tape:
        root = fn()
    backward(tape, root)
    return [v.grad_or_zeros().copy() for v in leaves]
