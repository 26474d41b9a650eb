"""Per-pose training data: bone transforms, meshes and labelled point pools.

One synthetic subject (fixed shape coefficients) is posed many times.  For
every pose four pools are drawn once and labelled by the inside oracle:
uniform and near-surface points around the posed mesh, and the same two
kinds around the canonical (unposed, pose-corrected) mesh.  Pseudo
ground-truth skinning weights are stored as nearest-vertex indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..body import (
    BodyModel,
    BoneTransformSet,
    bone_transforms,
    canonical_vertices,
    lbs_apply,
    rodrigues,
    sample_pose,
)
from ..io.config import DataConfig
from ..skinning import canonicalize_point
from .oracle import InsideOracle
from .sampling import nearest_vertex, padded_bbox, sample_near_surface, sample_uniform

POOL_KINDS = ("posed_uniform", "posed_near", "canonical_uniform", "canonical_near")


@dataclass
class Pool:
    points: np.ndarray  # [P, 3] float32
    occupancy: np.ndarray  # [P] bool
    nearest: np.ndarray  # [P] int32


@dataclass
class PoseData:
    betas: np.ndarray
    rotations: np.ndarray  # [K, 3, 3]
    transforms: dict  # BoneTransformSet arrays
    posed: np.ndarray  # posed vertices [N, 3]
    canonical: np.ndarray  # canonical vertices [N, 3]
    pools: dict = field(default_factory=dict)  # kind -> Pool
    mapped: np.ndarray | None = None  # posed pool points in canonical space via pseudo-GT

    def bone_set(self) -> BoneTransformSet:
        return BoneTransformSet.from_numpy(self.transforms)


def make_pose(body: BodyModel, betas, rotations, translation=None) -> PoseData:
    ts = bone_transforms(body, betas, rotations, translation)
    canon = canonical_vertices(body, betas, rotations).data
    posed = lbs_apply(canon, body.weights, ts.B).data
    return PoseData(np.asarray(betas, float), np.asarray(rotations, float), ts.numpy(),
                    posed, canon)


def map_posed_pools(body: BodyModel, pose: PoseData) -> None:
    """Pull the posed pools back to canonical space with their pseudo ground-truth weights."""
    mapped = []
    B = pose.transforms["B"][None]
    for kind in ("posed_uniform", "posed_near"):
        pool = pose.pools[kind]
        w = body.weights[pool.nearest][None]
        mapped.append(canonicalize_point(pool.points.astype(np.float64)[None], w, B).data[0])
    pose.mapped = np.stack(mapped).astype(np.float32)  # [2, P, 3]


def fill_pools(body: BodyModel, pose: PoseData, n: int, rng: np.random.Generator,
               cfg: DataConfig) -> None:
    """Draw and label the four point pools (n points per kind) for one pose."""
    for space, verts in (("posed", pose.posed), ("canonical", pose.canonical)):
        lo, hi = padded_bbox(verts, cfg.bbox_padding)
        uniform = sample_uniform(lo, hi, n, rng)
        near = sample_near_surface(verts, body.faces, n, rng, cfg.near_sigma)
        oracle = InsideOracle(verts, body.faces)
        tree = cKDTree(verts)
        for kind, pts in ((f"{space}_uniform", uniform), (f"{space}_near", near)):
            pose.pools[kind] = Pool(pts.astype(np.float32), oracle(pts),
                                    nearest_vertex(pts, verts, tree).astype(np.int32))
    map_posed_pools(body, pose)


@dataclass
class Dataset:
    body: BodyModel
    betas: np.ndarray
    train: list  # PoseData
    heldout: list  # PoseData

    def transforms(self, indices, heldout: bool = False) -> BoneTransformSet:
        poses = self.heldout if heldout else self.train
        names = ("G", "B", "joints", "lengths", "rotations", "translation")
        return BoneTransformSet.from_numpy(
            {n: np.stack([poses[i].transforms[n] for i in indices]) for n in names})


def build_dataset(body: BodyModel, cfg: DataConfig, seed: int, train: bool = True) -> Dataset:
    """Deterministic dataset for one subject: training poses with pools, held-out poses.

    With ``train=False`` only the held-out split is built; it is identical to the
    held-out split of the full dataset.
    """
    root = np.random.SeedSequence([seed, 0xDA7A])
    subject, train_seq, held_seq = root.spawn(3)
    betas = np.random.default_rng(subject).normal(scale=cfg.beta_scale, size=body.n_betas)
    poses, heldout = [], []
    splits = [(held_seq, heldout, cfg.n_heldout)]
    if train:
        splits.insert(0, (train_seq, poses, cfg.n_poses))
    for seq, out, count in splits:
        for sub in seq.spawn(count):
            rng = np.random.default_rng(sub)
            rot = rodrigues(sample_pose(rng, cfg.pose_scale, body.n_joints))
            pose = make_pose(body, betas, rot)
            fill_pools(body, pose, cfg.pool_size, rng, cfg)
            out.append(pose)
    return Dataset(body, betas, poses, heldout)


def dataset_arrays(ds: Dataset) -> dict:
    """Flatten a dataset into named arrays for the container format."""
    out = {"betas": ds.betas}
    for split, poses in (("train", ds.train), ("heldout", ds.heldout)):
        for i, p in enumerate(poses):
            pre = f"{split}/{i}/"
            out[pre + "rotations"] = p.rotations
            for kind, pool in p.pools.items():
                out[pre + kind + "/points"] = pool.points
                out[pre + kind + "/occupancy"] = pool.occupancy
                out[pre + kind + "/nearest"] = pool.nearest
    return out


def dataset_from_arrays(body: BodyModel, arrays: dict, n_train: int, n_heldout: int) -> Dataset:
    betas = arrays["betas"]
    splits = {"train": [], "heldout": []}
    for split, count in (("train", n_train), ("heldout", n_heldout)):
        for i in range(count):
            pre = f"{split}/{i}/"
            pose = make_pose(body, betas, arrays[pre + "rotations"])
            for kind in POOL_KINDS:
                pose.pools[kind] = Pool(arrays[pre + kind + "/points"],
                                        arrays[pre + kind + "/occupancy"],
                                        arrays[pre + kind + "/nearest"])
            map_posed_pools(body, pose)
            splits[split].append(pose)
    return Dataset(body, betas, splits["train"], splits["heldout"])
