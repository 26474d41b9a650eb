"""Differentiable primitives.

All functions accept ``Value`` objects or anything ``np.asarray`` accepts and
return a ``Value``.  Broadcasting follows numpy; gradients are summed back
to the input shapes.
"""

from __future__ import annotations

import builtins
import string

import numpy as np

from .core import Value, as_value, make_result


def _pair(a, b) -> tuple[Value, Value]:
    """Promote a pair of operands; bare scalars adopt the other operand's dtype."""
    if isinstance(a, Value) and not isinstance(b, Value) and np.ndim(b) == 0:
        return a, Value(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Value) and not isinstance(a, Value) and np.ndim(a) == 0:
        return Value(np.asarray(a, dtype=b.dtype)), b
    return as_value(a), as_value(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = _pair(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Value:
    a, b = _pair(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Value:
    a, b = _pair(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Value:
    a, b = _pair(a, b)
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Value:
    a = as_value(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def square(a) -> Value:
    a = as_value(a)
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a) -> Value:
    a = as_value(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Value:
    a = as_value(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sin(a) -> Value:
    a = as_value(a)
    return make_result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Value:
    a = as_value(a)
    return make_result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def abs(a) -> Value:  # noqa: A001 - mirrors numpy naming
    a = as_value(a)
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Value:
    a = as_value(a)
    mask = a.data > 0
    return make_result(np.maximum(a.data, 0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo: float, hi: float) -> Value:
    """Clamp to ``[lo, hi]``; the gradient is zero wherever the clamp is active."""
    a = as_value(a)
    mask = (a.data > lo) & (a.data < hi)
    return make_result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def where(mask, a, b) -> Value:
    mask = np.asarray(mask, dtype=bool)
    a, b = as_value(a), as_value(b)
    return make_result(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


# ---------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max(a, axis: int = -1) -> Value:  # noqa: A001
    """Max-reduction along one axis; the gradient goes to the first maximiser."""
    a = as_value(a)
    idx = np.argmax(a.data, axis=axis)
    idx_e = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_e, axis=axis).squeeze(axis)

    def grad_fn(g):
        gi = np.zeros_like(a.data)
        np.put_along_axis(gi, idx_e, np.expand_dims(g, axis), axis=axis)
        return (gi,)

    return make_result(out, (a,), grad_fn)


def softmax(a, axis: int = -1) -> Value:
    a = as_value(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), grad_fn)


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Value:
    a = as_value(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Value:
    a = as_value(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def expand_dims(a, axis: int) -> Value:
    a = as_value(a)
    return make_result(np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a, shape) -> Value:
    a = as_value(a)
    return make_result(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),)
    )


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(
        isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items
    )


def getitem(a, idx) -> Value:
    a = as_value(a)
    basic = _is_basic_index(idx)

    def grad_fn(g):
        gi = np.zeros_like(a.data)
        if basic:
            gi[idx] += g
        else:
            np.add.at(gi, idx, g)
        return (gi,)

    return make_result(a.data[idx], (a,), grad_fn)


def concat(values, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([v.shape[ax] for v in values])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_result(out, values, grad_fn)


def stack(values, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    out = np.stack([v.data for v in values], axis=axis)
    ax = axis % out.ndim

    def grad_fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(values)))

    return make_result(out, values, grad_fn)


# ---------------------------------------------------------------- linear algebra


def linear(x, weight, bias=None) -> Value:
    """``x @ weight.T + bias`` over the last axis of ``x`` (any leading dims)."""
    x, weight = as_value(x), as_value(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"linear: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_value(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        inputs.append(bias)

    def grad_fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ weight.data) if x.requires_grad else None
        gw = (g2.T @ x.data.reshape(-1, x.shape[-1])) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return make_result(out, inputs, grad_fn)


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least two dimensions")
    out = a.data @ b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), grad_fn)


_LETTERS = string.ascii_letters


def _expand_ellipsis(spec: str, shapes) -> str:
    if "..." not in spec:
        return spec
    lhs, rhs = spec.split("->")
    terms = lhs.split(",")
    used = set(spec) - {".", ",", "-", ">"}
    free = [c for c in _LETTERS if c not in used]
    n_ell = 0
    for term, shp in zip(terms, shapes):
        if "..." in term:
            n_ell = builtins.max(n_ell, len(shp) - (len(term) - 3))
    ell = "".join(free[:n_ell])
    new_terms = []
    for term, shp in zip(terms, shapes):
        if "..." in term:
            k = len(shp) - (len(term) - 3)
            if k != n_ell:
                raise ValueError("einsum: ellipsis dims must agree across operands")
            term = term.replace("...", ell)
        new_terms.append(term)
    return ",".join(new_terms) + "->" + rhs.replace("...", ell)


def einsum(spec: str, *operands) -> Value:
    """Explicit-output einsum (``'ij,jk->ik'``) without implicit broadcasting."""
    ops = [as_value(o) for o in operands]
    spec = spec.replace(" ", "")
    if "->" not in spec:
        raise ValueError("einsum requires an explicit '->' output")
    spec = _expand_ellipsis(spec, [o.shape for o in ops])
    lhs, out_sub = spec.split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ValueError("einsum: operand count mismatch")
    for sub_, o in zip(in_subs, ops):
        if len(set(sub_)) != len(sub_):
            raise ValueError("einsum: repeated indices within one operand are not supported")
        if len(sub_) != o.ndim:
            raise ValueError(f"einsum: subscript {sub_!r} does not match shape {o.shape}")
    out = np.einsum(spec, *[o.data for o in ops], optimize=len(ops) > 1)

    def grad_fn(g):
        grads = []
        for i, (sub_i, op_i) in enumerate(zip(in_subs, ops)):
            if not op_i.requires_grad:
                grads.append(None)
                continue
            others = [(s, o) for j, (s, o) in enumerate(zip(in_subs, ops)) if j != i]
            avail = set(out_sub).union(*[set(s) for s, _ in others]) if others else set(out_sub)
            target = "".join(c for c in sub_i if c in avail)
            terms = ",".join([out_sub] + [s for s, _ in others])
            gi = np.einsum(f"{terms}->{target}", g, *[o.data for _, o in others],
                           optimize=len(others) > 0)
            if target != sub_i:
                shape = [op_i.shape[k] if c in avail else 1 for k, c in enumerate(sub_i)]
                gi = np.broadcast_to(gi.reshape(shape), op_i.shape).copy()
            grads.append(gi)
        return tuple(grads)

    return make_result(out, ops, grad_fn)


def solve(a, b) -> Value:
    """Batched ``a^{-1} b`` for square ``a[..., n, n]`` and vectors ``b[..., n]``."""
    a, b = as_value(a), as_value(b)
    out = np.linalg.solve(a.data, b.data[..., None])[..., 0]

    def grad_fn(g):
        gb = np.linalg.solve(np.swapaxes(a.data, -1, -2), g[..., None])[..., 0]
        ga = -gb[..., :, None] * out[..., None, :]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(out, (a, b), grad_fn)


def batch_norm(x, eps: float = 1e-5):
    """Normalise over every leading axis, per feature on the last axis.

    The batch variance is floored at ``eps`` (``max(var, eps)``) rather than
    offset by it.  Returns ``(normalised, batch_mean, batch_var)``; the two
    statistics are plain arrays for running-average bookkeeping.
    """
    x = as_value(x)
    flat = x.data.reshape(-1, x.shape[-1])
    n = flat.shape[0]
    if n < 2:
        raise ValueError("batch normalisation needs at least two samples per feature")
    mu = flat.mean(axis=0)
    centred = x.data - mu
    var = np.square(centred).reshape(-1, x.shape[-1]).mean(axis=0)
    floored = var < eps
    inv_std = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = centred * inv_std

    def grad_fn(g):
        g2 = g.reshape(-1, x.shape[-1])
        xh2 = xhat.reshape(-1, x.shape[-1])
        sum_g = g2.sum(axis=0)
        sum_gx = (g2 * xh2).sum(axis=0)
        # where the floor is active the variance is a constant
        sum_gx = np.where(floored, 0.0, sum_gx)
        gx = inv_std * (g - sum_g / n - xhat * sum_gx / n)
        return (gx,)

    return make_result(xhat, (x,), grad_fn), mu, var


# ---------------------------------------------------------------- operator wiring


def _rsub(a, b):
    return sub(b, a)


def _rdiv(a, b):
    return div(b, a)


Value.__add__ = add
Value.__radd__ = add
Value.__sub__ = sub
Value.__rsub__ = _rsub
Value.__mul__ = mul
Value.__rmul__ = mul
Value.__truediv__ = div
Value.__rtruediv__ = _rdiv
Value.__neg__ = neg
Value.__matmul__ = matmul
Value.__getitem__ = getitem
Value.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)
Value.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)
Value.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
