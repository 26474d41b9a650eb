"""Encoders producing the global body code and the skinning-net conditioning.

The global code concatenates (in this order) a shape feature from point
clouds of the estimated canonical and posed vertices, a structure feature
from the kinematic tree, and a pose feature locating the root in every
bone's canonical frame.  Vertex clouds are expressed relative to the root
joint (rest root for canonical, posed root for posed) so that every code is
invariant to a global translation of the body.
"""

from __future__ import annotations

import numpy as np

from .autodiff import F, Linear, ParameterStore, Value, as_value
from .networks import BoneProjection, PointNetEncoder, StructureEncoder

ENCODER_ORDER = ("shape", "structure", "pose")


def rigid_inverse_apply(B, points) -> Value:
    """Apply B_k^-1 to points: B [..., K, 4, 4], points [..., K, 3] -> [..., K, 3]."""
    B = as_value(B)
    R = B[..., :3, :3]
    t = B[..., :3, 3]
    return F.einsum("...kji,...kj->...ki", R, F.sub(points, t))


def pose_encode(B, point) -> Value:
    """Concatenate B_k^-1 · point over bones: B [..., K, 4, 4], point [..., 3] -> [..., 3K]."""
    B, point = as_value(B), as_value(point)
    K = B.shape[-3]
    p = F.broadcast_to(F.expand_dims(point, -2), point.shape[:-1] + (K, 3))
    local = rigid_inverse_apply(B, p)
    return F.reshape(local, local.shape[:-2] + (3 * K,))


def pointnet_encode(encoder: PointNetEncoder, points) -> Value:
    return encoder(points)


class ShapeEncoder:
    """Two point-set encoders (canonical and posed vertices), concatenated."""

    def __init__(self, store: ParameterStore, name: str, width: int, hidden: int,
                 rng: np.random.Generator, n_blocks: int = 3):
        half = width // 2
        self.canonical = PointNetEncoder(store, f"{name}.canonical", half, hidden, rng, n_blocks)
        self.posed = PointNetEncoder(store, f"{name}.posed", width - half, hidden, rng, n_blocks)
        self.width = width

    def __call__(self, canonical, posed) -> Value:
        return F.concat([self.canonical(canonical), self.posed(posed)], axis=-1)


class SkinningConditioning:
    """Codes conditioning the skinning-weight networks.

    ``forward`` gives c_fwd from the two vertex clouds; ``inverse`` appends a
    linear pose/joint feature to c_fwd.
    """

    def __init__(self, store: ParameterStore, name: str, n_joints: int, rng: np.random.Generator,
                 cloud_width: int = 100, pose_width: int = 80, hidden: int = 32,
                 n_blocks: int = 3):
        self.canonical = PointNetEncoder(store, f"{name}.canonical", cloud_width, hidden, rng, n_blocks)
        self.posed = PointNetEncoder(store, f"{name}.posed", cloud_width, hidden, rng, n_blocks)
        self.pose = Linear(store, f"{name}.pose", 12 * n_joints, pose_width, rng)
        self.fwd_width = 2 * cloud_width
        self.inv_width = 2 * cloud_width + pose_width

    def forward(self, canonical, posed) -> Value:
        return F.concat([self.canonical(canonical), self.posed(posed)], axis=-1)

    def inverse(self, c_fwd, rotations, joints) -> Value:
        return build_inverse_conditioning(self.pose, c_fwd, rotations, joints)


def build_inverse_conditioning(pose_linear: Linear, c_fwd, rotations, joints) -> Value:
    rotations, joints = as_value(rotations), as_value(joints)
    batch = rotations.shape[:-3]
    K = rotations.shape[-3]
    flat = F.concat([F.reshape(rotations, batch + (9 * K,)),
                     F.reshape(joints, batch + (3 * K,))], axis=-1)
    return F.concat([as_value(c_fwd), pose_linear(flat)], axis=-1)


class GlobalEncoder:
    """Global code z from the enabled encoders plus per-bone projections z_k."""

    def __init__(self, store: ParameterStore, name: str, parents, rng: np.random.Generator,
                 encoders=ENCODER_ORDER, shape_width: int = 128, structure_width: int = 6,
                 bone_code: int = 12, hidden: int = 32, n_blocks: int = 3):
        self.enabled = tuple(e for e in ENCODER_ORDER if e in set(encoders))
        K = len(parents)
        self.shape = self.structure = None
        width = 0
        if "shape" in self.enabled:
            self.shape = ShapeEncoder(store, f"{name}.shape", shape_width, hidden, rng, n_blocks)
            width += shape_width
        if "structure" in self.enabled:
            self.structure = StructureEncoder(store, f"{name}.structure", parents, rng,
                                              structure_width)
            width += structure_width * K
        if "pose" in self.enabled:
            width += 3 * K
        self.width = width
        self.projection = BoneProjection(store, f"{name}.proj", K, width, bone_code, rng)

    def code(self, transforms, canonical=None, posed=None) -> Value:
        """z for a (batched) BoneTransformSet; vertex clouds needed only for shape."""
        parts = []
        if self.shape is not None:
            parts.append(self.shape(canonical, posed))
        if self.structure is not None:
            parts.append(self.structure(transforms.rotations, transforms.joints,
                                        transforms.lengths))
        if "pose" in self.enabled:
            parts.append(pose_encode(transforms.B, transforms.root_location))
        return parts[0] if len(parts) == 1 else F.concat(parts, axis=-1)

    def bone_codes(self, z) -> Value:
        return self.projection(z)
