"""Procedural humanoid body models with the same structure as SMPL.

The surface is the zero level set of a smooth union of capsules, meshed with
marching cubes at a spacing chosen to land near the requested vertex count.
Skinning weights, the joint regressor and the blend-shape bases are derived
from that surface deterministically from a seed.
"""

from __future__ import annotations

import logging

import numpy as np
from skimage.measure import marching_cubes

from ..mesh import face_areas, is_watertight, self_intersections, signed_volume
from .model import BodyModel

log = logging.getLogger(__name__)

JOINT_NAMES = (
    "pelvis", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
PARENTS = np.array([-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14])

# T-pose joint centres (metres, y up, z forward)
_JOINTS = np.array([
    [0.00, 0.95, 0.00],
    [0.00, 1.22, 0.00],
    [0.00, 1.48, 0.00],
    [0.00, 1.60, 0.00],
    [0.18, 1.42, 0.00],
    [0.46, 1.42, 0.00],
    [0.72, 1.42, 0.00],
    [-0.18, 1.42, 0.00],
    [-0.46, 1.42, 0.00],
    [-0.72, 1.42, 0.00],
    [0.11, 0.88, 0.00],
    [0.11, 0.49, 0.00],
    [0.11, 0.10, 0.00],
    [-0.11, 0.88, 0.00],
    [-0.11, 0.49, 0.00],
    [-0.11, 0.10, 0.00],
])

# bone segment end points for skinning (start is the joint itself)
_BONE_ENDS = np.array([
    [0.00, 1.22, 0.00],
    [0.00, 1.48, 0.00],
    [0.00, 1.60, 0.00],
    [0.00, 1.82, 0.00],
    [0.46, 1.42, 0.00],
    [0.72, 1.42, 0.00],
    [0.88, 1.42, 0.00],
    [-0.46, 1.42, 0.00],
    [-0.72, 1.42, 0.00],
    [-0.88, 1.42, 0.00],
    [0.11, 0.49, 0.00],
    [0.11, 0.10, 0.00],
    [0.11, 0.04, 0.15],
    [-0.11, 0.49, 0.00],
    [-0.11, 0.10, 0.00],
    [-0.11, 0.04, 0.15],
])

# (start, end, radius) capsules forming the surface
_CAPSULES = [
    ((-0.10, 0.92, 0.0), (0.10, 0.92, 0.0), 0.13),
    ((0.0, 0.95, 0.0), (0.0, 1.22, 0.0), 0.14),
    ((0.0, 1.22, 0.0), (0.0, 1.40, 0.0), 0.15),
    ((-0.18, 1.42, 0.0), (0.18, 1.42, 0.0), 0.085),
    ((0.0, 1.45, 0.0), (0.0, 1.62, 0.0), 0.065),
    ((0.0, 1.68, 0.01), (0.0, 1.78, 0.01), 0.10),
    ((0.18, 1.42, 0.0), (0.46, 1.42, 0.0), 0.07),
    ((0.46, 1.42, 0.0), (0.72, 1.42, 0.0), 0.06),
    ((0.72, 1.42, 0.0), (0.84, 1.42, 0.0), 0.055),
    ((-0.18, 1.42, 0.0), (-0.46, 1.42, 0.0), 0.07),
    ((-0.46, 1.42, 0.0), (-0.72, 1.42, 0.0), 0.06),
    ((-0.72, 1.42, 0.0), (-0.84, 1.42, 0.0), 0.055),
    ((0.11, 0.88, 0.0), (0.11, 0.49, 0.0), 0.09),
    ((0.11, 0.49, 0.0), (0.11, 0.10, 0.0), 0.07),
    ((0.11, 0.08, -0.02), (0.11, 0.06, 0.14), 0.06),
    ((-0.11, 0.88, 0.0), (-0.11, 0.49, 0.0), 0.09),
    ((-0.11, 0.49, 0.0), (-0.11, 0.10, 0.0), 0.07),
    ((-0.11, 0.08, -0.02), (-0.11, 0.06, 0.14), 0.06),
]

# per-joint axis-angle sampling ranges in radians: (min, max) per axis
POSE_LIMITS = {
    "pelvis": ((-0.15, 0.15), (-0.3, 0.3), (-0.1, 0.1)),
    "chest": ((-0.25, 0.25), (-0.25, 0.25), (-0.15, 0.15)),
    "neck": ((-0.3, 0.3), (-0.3, 0.3), (-0.2, 0.2)),
    "head": ((-0.2, 0.2), (-0.3, 0.3), (-0.2, 0.2)),
    "l_shoulder": ((-0.4, 0.4), (-0.5, 0.5), (-0.8, 0.4)),
    "l_elbow": ((-0.1, 0.1), (-1.0, 0.0), (-0.1, 0.1)),
    "l_wrist": ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)),
    "r_shoulder": ((-0.4, 0.4), (-0.5, 0.5), (-0.4, 0.8)),
    "r_elbow": ((-0.1, 0.1), (0.0, 1.0), (-0.1, 0.1)),
    "r_wrist": ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)),
    "l_hip": ((-0.6, 0.4), (-0.2, 0.2), (0.0, 0.25)),
    "l_knee": ((0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)),
    "l_ankle": ((-0.3, 0.3), (-0.2, 0.2), (-0.15, 0.15)),
    "r_hip": ((-0.6, 0.4), (-0.2, 0.2), (-0.25, 0.0)),
    "r_knee": ((0.0, 1.0), (-0.05, 0.05), (-0.05, 0.05)),
    "r_ankle": ((-0.3, 0.3), (-0.2, 0.2), (-0.15, 0.15)),
}


class ModelGenerationError(RuntimeError):
    pass


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip((points - a) @ ab / max(ab @ ab, 1e-12), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def body_sdf(points: np.ndarray, smooth: float = 0.025) -> np.ndarray:
    """Smooth-union signed distance of the capsule body (negative inside)."""
    d = None
    for a, b, r in _CAPSULES:
        di = _segment_distance(points, np.asarray(a), np.asarray(b)) - r
        if d is None:
            d = di
        else:
            h = np.clip(0.5 + 0.5 * (di - d) / smooth, 0.0, 1.0)
            d = di * (1 - h) + d * h - smooth * h * (1 - h)
    return d


def _mesh_body(spacing: float, jitter: np.ndarray):
    lo = np.array([-1.0, -0.12, -0.30]) + jitter
    hi = np.array([1.0, 1.98, 0.35]) + jitter
    axes = [np.arange(l, h + spacing, spacing) for l, h in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    sdf = body_sdf(grid.reshape(-1, 3)).reshape(grid.shape[:3])
    # keep the level set off grid nodes to avoid degenerate triangles
    sdf[np.abs(sdf) < 1e-9] = 1e-9
    verts, faces, _, _ = marching_cubes(sdf, level=0.0, spacing=(spacing,) * 3)
    verts = verts + lo
    faces = faces.astype(np.int64)
    if signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1].copy()
    return verts, faces


def _smooth_field(points: np.ndarray, rng: np.random.Generator, n_waves: int = 4,
                  freq: float = 3.0) -> np.ndarray:
    """Random low-frequency vector field sampled at ``points``, [P, 3]."""
    field = np.zeros_like(points)
    for _ in range(n_waves):
        omega = rng.normal(size=3) * freq
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.normal(size=3)
        field += np.sin(points @ omega + phase)[:, None] * amp
    return field


def skinning_weights(vertices: np.ndarray, sigma: float = 0.06) -> np.ndarray:
    d = np.stack([_segment_distance(vertices, _JOINTS[k], _BONE_ENDS[k])
                  for k in range(len(_JOINTS))], axis=1)
    logits = -(d ** 2) / sigma**2
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def joint_regressor(vertices: np.ndarray, scale: float = 0.09) -> np.ndarray:
    d2 = ((vertices[None, :, :] - _JOINTS[:, None, :]) ** 2).sum(-1)
    reg = np.exp(-d2 / scale**2)
    reg[reg < 1e-6 * reg.max(axis=1, keepdims=True)] = 0.0
    return reg / reg.sum(axis=1, keepdims=True)


def make_synthetic_model(seed: int = 0, n_vertices: int = 600, n_betas: int = 8,
                         n_joints: int = 16, max_attempts: int = 32,
                         max_condition: float = 1e4) -> BodyModel:
    """Deterministic humanoid body model for the given seed."""
    if n_joints != len(JOINT_NAMES):
        raise ValueError(f"the humanoid template has {len(JOINT_NAMES)} joints")
    if not n_joints > n_betas:
        raise ValueError("need more joints than shape coefficients")
    root = np.random.SeedSequence(seed)
    spacing = _spacing_for(n_vertices)
    for attempt, sub in enumerate(root.spawn(max_attempts)):
        rng = np.random.default_rng(sub)
        jitter = rng.uniform(-0.25, 0.25, size=3) * spacing
        verts, faces = _mesh_body(spacing, jitter)
        if not is_watertight(faces) or face_areas(verts, faces).min() <= 1e-12:
            log.debug("attempt %d: mesh not watertight", attempt)
            continue
        N, K = len(verts), n_joints
        W = skinning_weights(verts)
        J = joint_regressor(verts)
        fields = np.stack([_smooth_field(verts, rng).reshape(-1) for _ in range(n_betas)], axis=1)
        q, _ = np.linalg.qr(fields)
        shapedirs = q.reshape(N, 3, n_betas)
        posedirs = np.empty((N, 3, 9 * K))
        for m in range(9 * K):
            k = m // 9
            posedirs[:, :, m] = 0.01 * W[:, k:k + 1] * _smooth_field(verts, rng, n_waves=2)
        model = BodyModel(template=verts, shapedirs=shapedirs, posedirs=posedirs,
                          joint_regressor=J, weights=W, parents=PARENTS.copy(), faces=faces)
        cond = np.linalg.cond(model.joint_shape_matrix)
        if not cond < max_condition:
            log.debug("attempt %d: joint-shape condition %.3g", attempt, cond)
            continue
        if self_intersections(verts, faces):
            log.debug("attempt %d: self-intersecting template", attempt)
            continue
        return model
    raise ModelGenerationError(f"{max_attempts} consecutive candidate models were rejected")


def _spacing_for(n_vertices: int) -> float:
    """Grid spacing whose marching-cubes mesh has roughly ``n_vertices`` vertices."""
    # vertex count scales ~ area / spacing^2; calibrated on the capsule body
    cache = _spacing_for.__dict__.setdefault("cache", {})
    if n_vertices in cache:
        return cache[n_vertices]
    lo, hi = 0.012, 0.12
    for _ in range(18):
        mid = np.sqrt(lo * hi)
        count = len(_mesh_body(mid, np.zeros(3))[0])
        if count > n_vertices:
            lo = mid
        else:
            hi = mid
    cache[n_vertices] = float(np.sqrt(lo * hi))
    return cache[n_vertices]


def sample_pose(rng: np.random.Generator, scale: float = 1.0, n_joints: int = 16) -> np.ndarray:
    """Axis-angle pose [K, 3] drawn uniformly within the humanoid joint limits."""
    aa = np.zeros((n_joints, 3))
    for k, name in enumerate(JOINT_NAMES[:n_joints]):
        for a, (lo, hi) in enumerate(POSE_LIMITS[name]):
            aa[k, a] = scale * rng.uniform(lo, hi)
    return aa
