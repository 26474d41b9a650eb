"""Skinning-weight fields and the point maps built on them.

Posed points are pulled into canonical space by inverting the weighted blend
of bone transforms, pushed back with weights re-estimated in canonical
space, and the disagreement between the two weight vectors is the cycle
distance fed to the occupancy decoder.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .autodiff import F, ParameterStore, Value, as_value
from .networks import ConditionedDecoder

SINGULAR_DET = 1e-8


def pseudo_gt_weights(points, vertices, weights, tree: cKDTree | None = None) -> np.ndarray:
    """Skinning weights of the nearest vertex; exact distance ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 3)
    vertices = np.asarray(vertices, dtype=np.float64)
    tree = tree or cKDTree(vertices)
    k = min(4, len(vertices))
    dist, idx = tree.query(flat, k=k)
    dist, idx = dist.reshape(len(flat), k), idx.reshape(len(flat), k)
    # recompute distances exactly so ties are decided on identical arithmetic
    exact = np.sum((vertices[idx] - flat[:, None, :]) ** 2, axis=-1)
    best = exact.min(axis=1, keepdims=True)
    cand = np.where(exact == best, idx, np.iinfo(np.int64).max)
    nearest = cand.min(axis=1)
    return np.asarray(weights)[nearest].reshape(points.shape[:-1] + (weights.shape[1],))


def mix_transforms(weights, B) -> Value:
    """Per-point blend Σ_k w_k B_k: weights [..., P, K], B [..., K, 4, 4] -> [..., P, 4, 4]."""
    return F.einsum("...pk,...kij->...pij", weights, B)


def canonicalize_point(x, weights, B) -> Value:
    """Invert the blended transform at each point, x [..., P, 3] -> [..., P, 3].

    Where the blended 3x3 block is (near) singular the dominant bone's rigid
    inverse is used instead.
    """
    x, weights, B = as_value(x), as_value(weights), as_value(B)
    mixed = mix_transforms(weights, B)
    A = mixed[..., :3, :3]
    t = mixed[..., :3, 3]
    singular = np.abs(np.linalg.det(A.data)) < SINGULAR_DET
    if np.any(singular):
        dominant = np.argmax(weights.data, axis=-1)  # [..., P]
        onehot = np.eye(weights.shape[-1], dtype=weights.dtype)[dominant]
        rigid = mix_transforms(onehot, B)
        mask = singular[..., None, None]
        A = F.where(mask, rigid[..., :3, :3], A)
        t = F.where(singular[..., None], rigid[..., :3, 3], t)
    return F.solve(A, F.sub(x, t))


def reproject_point(xc, weights, B) -> Value:
    """Blend-transform canonical points back to posed space."""
    xc = as_value(xc)
    mixed = mix_transforms(weights, B)
    return F.add(F.einsum("...pij,...pj->...pi", mixed[..., :3, :3], xc), mixed[..., :3, 3])


def cycle_distance(w_posed, w_canonical) -> Value:
    """L1 distance between the two weight estimates of each point."""
    return F.sum(F.abs(F.sub(w_posed, w_canonical)), axis=-1)


def local_point_code(weights, bone_codes) -> Value:
    """Blend of per-bone codes: weights [..., P, K], codes [..., K, C] -> [..., P, C]."""
    return F.einsum("...pk,...kc->...pc", weights, bone_codes)


class LbsNet:
    """Skinning-weight field conditioned on a per-body code; outputs lie on the simplex."""

    def __init__(self, store: ParameterStore, name: str, n_cond: int, n_joints: int,
                 hidden: int, rng: np.random.Generator, n_blocks: int = 5):
        self.decoder = ConditionedDecoder(store, name, n_cond, hidden, n_joints, rng, n_blocks)
        self.n_cond = n_cond

    def logits(self, x, c, training: bool = False) -> Value:
        return self.decoder(x, c, training)

    def __call__(self, x, c, training: bool = False) -> Value:
        return lbsnet_weights(self, x, c, training)


def lbsnet_weights(net: LbsNet, x, c, training: bool = False) -> Value:
    c = as_value(c)
    if c.shape[-1] != net.n_cond:
        raise ValueError(f"conditioning width {c.shape[-1]} does not match network ({net.n_cond})")
    return F.softmax(net.logits(x, c, training), axis=-1)
