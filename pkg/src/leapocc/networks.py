"""Network building blocks: residual PointNet, CBN-conditioned decoders, the
tree-structured bone encoder and per-bone projections.

Every block registers its tensors in a shared :class:`ParameterStore` under a
dotted prefix so whole sub-networks can be frozen or checkpointed by name.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ConditionalBatchNorm, F, Linear, ParameterStore, Value


class ResBlock:
    """Fully connected residual block; the skip is linear (no bias) when widths differ."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or min(n_in, n_out)
        self.fc_0 = Linear(store, f"{name}.fc_0", n_in, hidden, rng)
        self.fc_1 = Linear(store, f"{name}.fc_1", hidden, n_out, rng)
        self.shortcut = None
        if n_in != n_out:
            self.shortcut = Linear(store, f"{name}.shortcut", n_in, n_out, rng, bias=False)

    def __call__(self, x) -> Value:
        net = self.fc_0(F.relu(x))
        dx = self.fc_1(F.relu(net))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.add(skip, dx)


class PointNetEncoder:
    """Permutation-invariant point-set encoder, points [..., M, 3] -> [..., out_dim].

    Per-point residual blocks; from the second block on, each point feature is
    concatenated with the max-pooled feature of the whole set.
    """

    def __init__(self, store: ParameterStore, name: str, out_dim: int, hidden: int,
                 rng: np.random.Generator, n_blocks: int = 3):
        self.fc_pos = Linear(store, f"{name}.fc_pos", 3, 2 * hidden, rng)
        self.blocks = [ResBlock(store, f"{name}.block{i}", 2 * hidden, hidden, rng)
                       for i in range(n_blocks)]
        self.fc_out = Linear(store, f"{name}.fc_out", hidden, out_dim, rng)
        self.out_dim = out_dim

    def __call__(self, points) -> Value:
        points = Value(points) if not isinstance(points, Value) else points
        if points.shape[-2] < 1:
            raise ValueError("cannot encode an empty point set")
        net = self.blocks[0](self.fc_pos(points))
        for block in self.blocks[1:]:
            pooled = F.max(net, axis=-2)
            pooled = F.broadcast_to(F.expand_dims(pooled, -2), net.shape)
            net = block(F.concat([net, pooled], axis=-1))
        return self.fc_out(F.relu(F.max(net, axis=-2)))


class CBNBlock:
    """Residual block of two (CBN, ReLU, linear) stages conditioned on ``c``."""

    def __init__(self, store: ParameterStore, name: str, hidden: int, n_cond: int,
                 rng: np.random.Generator):
        self.bn_0 = ConditionalBatchNorm(store, f"{name}.bn_0", hidden, n_cond, rng)
        self.fc_0 = Linear(store, f"{name}.fc_0", hidden, hidden, rng)
        self.bn_1 = ConditionalBatchNorm(store, f"{name}.bn_1", hidden, n_cond, rng)
        self.fc_1 = Linear(store, f"{name}.fc_1", hidden, hidden, rng, init="zeros")

    def __call__(self, x, c, training: bool) -> Value:
        net = self.fc_0(F.relu(self.bn_0(x, c, training)))
        dx = self.fc_1(F.relu(self.bn_1(net, c, training)))
        return F.add(x, dx)


class ConditionedDecoder:
    """Point decoder: linear lift of a 3-d point, CBN residual blocks, CBN, ReLU, linear.

    Used for the occupancy decoder (one output, sigmoid applied by the caller)
    and both skinning-weight networks (K outputs, softmax applied by the
    caller).  ``c`` must broadcast against the point axis, e.g. [..., 1, C]
    for one code per point set or [..., P, C] for one code per point.
    """

    def __init__(self, store: ParameterStore, name: str, n_cond: int, hidden: int,
                 n_out: int, rng: np.random.Generator, n_blocks: int = 5,
                 zero_output: bool = False):
        self.fc_p = Linear(store, f"{name}.fc_p", 3, hidden, rng)
        self.blocks = [CBNBlock(store, f"{name}.block{i}", hidden, n_cond, rng)
                       for i in range(n_blocks)]
        self.bn_out = ConditionalBatchNorm(store, f"{name}.bn_out", hidden, n_cond, rng)
        self.fc_out = Linear(store, f"{name}.fc_out", hidden, n_out, rng,
                             init="zeros" if zero_output else "uniform")
        self.n_cond, self.n_out = n_cond, n_out

    def __call__(self, points, c, training: bool) -> Value:
        c = Value(c) if not isinstance(c, Value) else c
        if c.shape[-1] != self.n_cond:
            raise ValueError(f"conditioning width {c.shape[-1]}, expected {self.n_cond}")
        net = self.fc_p(points)
        for block in self.blocks:
            net = block(net, c, training)
        return self.fc_out(F.relu(self.bn_out(net, c, training)))


class StructureEncoder:
    """Tree of per-bone two-layer perceptrons over (parent code, rotation, length, joint).

    The root's parent slot is a linear map of the full vectorised pose and
    joint set.  Output is the concatenation of all bone codes in bone order.
    """

    def __init__(self, store: ParameterStore, name: str, parents, rng: np.random.Generator,
                 width: int = 6):
        self.parents = np.asarray(parents)
        K = len(self.parents)
        self.width = width
        n_in = width + 9 + 1 + 3
        self.root_code = Linear(store, f"{name}.root", 12 * K, width, rng)
        self.nodes = [(Linear(store, f"{name}.node{k}.fc_0", n_in, n_in, rng),
                       Linear(store, f"{name}.node{k}.fc_1", n_in, width, rng))
                      for k in range(K)]
        self.order = _topological(self.parents)

    def __call__(self, rotations, joints, lengths) -> Value:
        """rotations [..., K, 3, 3], joints [..., K, 3], lengths [..., K] -> [..., 6K]."""
        K = len(self.parents)
        batch = rotations.shape[:-3]
        vec_r = F.reshape(rotations, batch + (K, 9))
        flat = F.concat([F.reshape(rotations, batch + (9 * K,)),
                         F.reshape(joints, batch + (3 * K,))], axis=-1)
        codes: list = [None] * K
        for k in self.order:
            parent = self.root_code(flat) if self.parents[k] < 0 else codes[self.parents[k]]
            inp = F.concat([parent, vec_r[..., k, :], lengths[..., k:k + 1], joints[..., k, :]],
                           axis=-1)
            fc_0, fc_1 = self.nodes[k]
            codes[k] = F.relu(fc_1(F.relu(fc_0(inp))))
        return F.concat(codes, axis=-1)


class BoneProjection:
    """Independent linear maps from the global code to one small code per bone."""

    def __init__(self, store: ParameterStore, name: str, n_bones: int, n_in: int,
                 n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = store.add(f"{name}.weight", rng.uniform(-bound, bound, (n_bones, n_out, n_in)))
        self.bias = store.add(f"{name}.bias", rng.uniform(-bound, bound, (n_bones, n_out)))

    def __call__(self, z) -> Value:
        """z [..., D] -> [..., K, n_out]."""
        return F.add(F.einsum("kcd,...d->...kc", self.weight, z), self.bias)


def _topological(parents) -> list[int]:
    children: list[list[int]] = [[] for _ in parents]
    roots = []
    for k, p in enumerate(parents):
        (roots if p < 0 else children[p]).append(k)
    order, stack = [], list(reversed(roots))
    while stack:
        k = stack.pop()
        order.append(k)
        stack.extend(reversed(children[k]))
    return order
