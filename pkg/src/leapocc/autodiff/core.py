"""Define-by-run reverse-mode differentiation over numpy arrays.

Every operation on a :class:`Value` that has a differentiable input is
appended to the innermost active :class:`Tape`.  ``backward`` replays the
tape in reverse and accumulates gradients into leaf values (parameters and
any user inputs flagged ``requires_grad``).  Without an active tape the same
functions simply compute, which is how frozen sub-networks and inference
run.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Value:
    """A dense array plus a lazily allocated gradient of the same shape."""

    __slots__ = ("data", "grad", "node_id", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic is wired up in functional.py to avoid an import cycle


def as_value(x, dtype=None) -> Value:
    if isinstance(x, Value):
        return x
    return Value(x, dtype=dtype)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; the tape collects every operation executed
    inside the ``with`` block by the current thread.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[Value, tuple[Value, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Value, inputs: tuple[Value, ...], backward: Callable) -> None:
        if self.consumed:
            raise RuntimeError("cannot record onto a tape that was already replayed")
        out.node_id = len(self.nodes)
        self.nodes.append((out, inputs, backward))

    def backward(self, root: Value) -> None:
        backward(self, root)


def make_result(data: np.ndarray, inputs: Sequence[Value], grad_fn: Callable) -> Value:
    """Wrap ``data`` as the output of an op; record it when differentiable.

    ``grad_fn(g)`` maps the output gradient to a tuple with one entry per
    input (``None`` for inputs that receive no gradient).
    """
    out = Value(data)
    tape = active_tape()
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), grad_fn)
    return out


def backward(tape: Tape, root: Value) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if tape.consumed:
        raise RuntimeError("tape already replayed; record a new one")
    tape.consumed = True
    if not root.requires_grad:
        return
    seed = np.ones_like(root.data)
    root.grad = seed if root.grad is None else root.grad + seed
    for out, inputs, grad_fn in reversed(tape.nodes):
        g = out.grad
        if g is None:
            continue
        in_grads = grad_fn(g)
        for v, gi in zip(inputs, in_grads):
            if gi is None or not v.requires_grad:
                continue
            if gi.shape != v.shape:
                raise RuntimeError(f"gradient shape {gi.shape} != value shape {v.shape}")
            if v.grad is None:
                v.grad = np.array(gi, dtype=v.dtype, copy=True)
            else:
                v.grad = v.grad + gi
        # intermediate gradients are not kept once propagated
        if out is not root:
            out.grad = None
