"""Skinned parametric body: blend shapes, joint regression and its inverse,
kinematic chain, and linear blend skinning.

All operations are written with the differentiable primitives so that
gradients flow from posed vertices back to pose and shape inputs.  Inputs may
carry any number of leading batch dimensions (``[..., K, 3, 3]`` poses,
``[..., B]`` shape coefficients).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..autodiff import F, Value, as_value
from ..mesh import Mesh, is_watertight, self_intersections


@dataclass(eq=False)
class BodyModel:
    template: np.ndarray  # [N, 3]
    shapedirs: np.ndarray  # [N, 3, B]
    posedirs: np.ndarray  # [N, 3, 9K]
    joint_regressor: np.ndarray  # [K, N]
    weights: np.ndarray  # [N, K]
    parents: np.ndarray  # [K], parents[0] == -1
    faces: np.ndarray  # [F, 3]
    rest_pose: np.ndarray = field(default=None)  # [K, 3, 3]

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.shapedirs = np.asarray(self.shapedirs, dtype=np.float64)
        self.posedirs = np.asarray(self.posedirs, dtype=np.float64)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.rest_pose is None:
            self.rest_pose = np.tile(np.eye(3), (self.n_joints, 1, 1))
        self.rest_pose = np.asarray(self.rest_pose, dtype=np.float64)
        self._check_shapes()

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_betas(self) -> int:
        return self.shapedirs.shape[2]

    def _check_shapes(self) -> None:
        N, K, B = self.n_vertices, self.n_joints, self.n_betas
        expect = {
            "template": (N, 3),
            "shapedirs": (N, 3, B),
            "posedirs": (N, 3, 9 * K),
            "joint_regressor": (K, N),
            "weights": (N, K),
            "parents": (K,),
            "rest_pose": (K, 3, 3),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be [F, 3]")

    # ---------------------------------------------------------------- cached linear maps

    @cached_property
    def template_joints(self) -> np.ndarray:
        return self.joint_regressor @ self.template

    @cached_property
    def joint_shape_matrix(self) -> np.ndarray:
        """Column n is vec(J S_n): how coefficient n moves the rest joints, [3K, B]."""
        js = np.einsum("kn,ncb->kcb", self.joint_regressor, self.shapedirs)
        return js.reshape(3 * self.n_joints, self.n_betas)

    @cached_property
    def joint_shape_solver(self) -> np.ndarray:
        """[B, 3K] least-squares solver for the joint displacement system."""
        A = self.joint_shape_matrix
        s = np.linalg.svd(A, compute_uv=False)
        if s[0] == 0 or s[-1] / s[0] < 1e-12:
            raise np.linalg.LinAlgError(
                "joint-shape matrix is rank deficient; shape cannot be recovered from joints"
            )
        Q, R = np.linalg.qr(A)
        diag = np.abs(np.diag(R))
        if diag.min() < 1e-8 * diag.max():
            return np.linalg.solve(A.T @ A + 1e-10 * np.eye(A.shape[1]), A.T)
        return np.linalg.solve(R, Q.T)

    @cached_property
    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_joints)]
        for k, p in enumerate(self.parents):
            if p >= 0:
                out[p].append(k)
        return out

    @cached_property
    def topological_order(self) -> list[int]:
        order, stack = [], [0]
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(self.children[k]))
        return order

    def descendants(self, k: int) -> set[int]:
        out, stack = set(), [k]
        while stack:
            j = stack.pop()
            out.add(j)
            stack.extend(self.children[j])
        return out

    def mesh(self, vertices=None) -> Mesh:
        v = self.template if vertices is None else np.asarray(vertices)
        return Mesh(v, self.faces)

    # ---------------------------------------------------------------- invariants

    def invariant_violations(self, check_geometry: bool = True) -> list[str]:
        problems = []
        W = self.weights
        if np.any(W < 0) or np.abs(W.sum(axis=1) - 1.0).max() > 1e-9:
            problems.append("skinning weight rows are not on the simplex")
        if self.parents[0] != -1 or np.any(self.parents[1:] < 0):
            problems.append("kinematic tree must be rooted at bone 0")
        elif np.any(self.parents[1:] >= np.arange(1, self.n_joints)):
            problems.append("parents must precede children")
        if not self.n_joints > self.n_betas:
            problems.append("need more joints than shape coefficients")
        A = self.joint_shape_matrix
        if np.linalg.matrix_rank(A) < self.n_betas:
            problems.append("joint-shape matrix lacks full column rank")
        if check_geometry:
            if not is_watertight(self.faces):
                problems.append("template mesh is not watertight")
            elif self_intersections(self.template, self.faces):
                problems.append("template mesh self-intersects")
        return problems

    def validate(self, check_geometry: bool = True) -> "BodyModel":
        problems = self.invariant_violations(check_geometry)
        if problems:
            raise ValueError("invalid body model: " + "; ".join(problems))
        return self

    # ---------------------------------------------------------------- serialization

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "template": self.template,
            "shapedirs": self.shapedirs,
            "posedirs": self.posedirs,
            "joint_regressor": self.joint_regressor,
            "weights": self.weights,
            "parents": self.parents,
            "rest_pose": self.rest_pose,
            "faces": self.faces,
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "BodyModel":
        missing = {"template", "shapedirs", "posedirs", "joint_regressor", "weights",
                   "parents", "faces"} - set(arrays)
        if missing:
            raise KeyError(f"body model arrays missing: {sorted(missing)}")
        return cls(**{k: arrays[k] for k in (
            "template", "shapedirs", "posedirs", "joint_regressor", "weights",
            "parents", "faces", "rest_pose") if k in arrays})


@dataclass(eq=False)
class BoneTransformSet:
    """World transforms G, canonical-to-posed transforms B and the rest skeleton.

    Fields carry optional leading batch dimensions; ``stack`` builds a batch.
    """

    G: Value  # [..., K, 4, 4]
    B: Value  # [..., K, 4, 4]
    joints: Value  # rest joints [..., K, 3]
    lengths: Value  # [..., K]
    rotations: Value  # relative rotations [..., K, 3, 3]
    translation: Value  # root translation [..., 3]

    @property
    def n_joints(self) -> int:
        return self.G.shape[-3]

    @property
    def batch_shape(self) -> tuple:
        return self.G.shape[:-3]

    @property
    def root_location(self) -> Value:
        """Posed position of the root joint."""
        return self.G[..., 0, :3, 3]

    @staticmethod
    def stack(sets: list["BoneTransformSet"]) -> "BoneTransformSet":
        names = ("G", "B", "joints", "lengths", "rotations", "translation")
        return BoneTransformSet(**{n: F.stack([getattr(s, n) for s in sets], axis=0) for n in names})

    def select(self, idx) -> "BoneTransformSet":
        names = ("G", "B", "joints", "lengths", "rotations", "translation")
        return BoneTransformSet(**{n: Value(getattr(self, n).data[idx]) for n in names})

    def numpy(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n).data for n in
                ("G", "B", "joints", "lengths", "rotations", "translation")}

    @classmethod
    def from_numpy(cls, arrays: dict) -> "BoneTransformSet":
        return cls(**{k: Value(np.asarray(v)) for k, v in arrays.items()})


def _vec_pose(pose: Value) -> Value:
    return F.reshape(pose, pose.shape[:-3] + (9 * pose.shape[-3],))


def shape_offsets(model: BodyModel, betas) -> Value:
    betas = as_value(betas)
    if betas.shape[-1] != model.n_betas:
        raise ValueError(f"expected {model.n_betas} shape coefficients, got {betas.shape[-1]}")
    return F.einsum("vcb,...b->...vc", model.shapedirs, betas)


def pose_offsets(model: BodyModel, pose) -> Value:
    pose = as_value(pose)
    if pose.shape[-3:] != (model.n_joints, 3, 3):
        raise ValueError(f"pose must be [..., {model.n_joints}, 3, 3], got {pose.shape}")
    delta = F.sub(_vec_pose(pose), model.rest_pose.reshape(-1))
    return F.einsum("vcm,...m->...vc", model.posedirs, delta)


def canonical_vertices(model: BodyModel, betas, pose) -> Value:
    """Template plus shape and pose blend-shape offsets, [..., N, 3]."""
    return F.add(F.add(model.template, shape_offsets(model, betas)), pose_offsets(model, pose))


def joints_from_shape(model: BodyModel, betas) -> Value:
    """Rest joints regressed from the shaped (unposed) template, [..., K, 3]."""
    shaped = F.add(model.template, shape_offsets(model, betas))
    return F.einsum("kn,...nc->...kc", model.joint_regressor, shaped)


def beta_from_joints(model: BodyModel, joints) -> Value:
    """Least-squares shape coefficients reproducing the given rest joints."""
    joints = as_value(joints)
    if joints.shape[-2:] != (model.n_joints, 3):
        raise ValueError(f"joints must be [..., {model.n_joints}, 3], got {joints.shape}")
    delta = F.sub(joints, model.template_joints)
    flat = F.reshape(delta, joints.shape[:-2] + (3 * model.n_joints,))
    return F.einsum("bm,...m->...b", model.joint_shape_solver, flat)


def _homogeneous(rot: Value, trans: Value) -> Value:
    """Assemble [..., 4, 4] from rotation [..., 3, 3] and translation [..., 3]."""
    top = F.concat([rot, F.expand_dims(trans, -1)], axis=-1)
    bottom = np.zeros(top.shape[:-2] + (1, 4))
    bottom[..., 0, 3] = 1.0
    return F.concat([top, bottom], axis=-2)


def bone_transforms(model: BodyModel, betas, pose, translation=None) -> BoneTransformSet:
    """World transforms G_k and local transforms B_k = G_k(pose) G_k(rest)^-1.

    The chain composes parent-relative joint offsets, so that at the rest
    pose (identity relative rotations) every B_k is the identity; the root
    translation is applied last to every G_k.
    """
    pose = as_value(pose)
    joints = joints_from_shape(model, betas)
    batch = joints.shape[:-2]
    if translation is None:
        translation = np.zeros(batch + (3,))
    translation = as_value(translation)
    parents = model.parents
    rel = []
    for k in range(model.n_joints):
        jk = joints[..., k, :]
        rel.append(jk if parents[k] < 0 else F.sub(jk, joints[..., parents[k], :]))
    rel = F.stack(rel, axis=-2)
    local = _homogeneous(pose, rel)  # [..., K, 4, 4]
    chain: list = [None] * model.n_joints
    for k in model.topological_order:
        lk = local[..., k, :, :]
        chain[k] = lk if parents[k] < 0 else F.matmul(chain[parents[k]], lk)
    G = F.stack(chain, axis=-3)
    rot = G[..., :3, :3]
    t_world = F.add(G[..., :3, 3], F.expand_dims(translation, -2))
    G = _homogeneous(rot, t_world)
    # G_k(rest)^-1 is a pure translation by -j_k
    t_local = F.sub(t_world, F.einsum("...kij,...kj->...ki", rot, joints))
    B = _homogeneous(rot, t_local)
    lengths = F.sqrt(F.sum(F.square(rel), axis=-1))
    return BoneTransformSet(G=G, B=B, joints=joints, lengths=lengths, rotations=pose,
                            translation=translation)


def lbs_apply(vertices, weights, B) -> Value:
    """Blend per-bone transforms with per-vertex weights, [..., N, 3]."""
    vertices, B = as_value(vertices), as_value(B)
    W = np.asarray(weights) if not isinstance(weights, Value) else weights
    ones = np.ones(vertices.shape[:-1] + (1,))
    vh = F.concat([vertices, ones], axis=-1)
    mixed = F.einsum("nk,...kij->...nij", W, B)
    out = F.einsum("...nij,...nj->...ni", mixed, vh)
    return F.div(out[..., :3], out[..., 3:4])


def estimate_vertices_from_transforms(model: BodyModel, transforms: BoneTransformSet):
    """Invert the body model from transforms: (canonical, posed) vertex estimates."""
    betas = beta_from_joints(model, transforms.joints)
    canon = canonical_vertices(model, betas, transforms.rotations)
    posed = lbs_apply(canon, model.weights, transforms.B)
    return canon, posed


def posed_vertices(model: BodyModel, betas, pose, translation=None) -> Value:
    ts = bone_transforms(model, betas, pose, translation)
    return lbs_apply(canonical_vertices(model, betas, pose), model.weights, ts.B)
