"""Training and evaluation point sampling: uniform in a padded box plus
Gaussian-perturbed surface points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..body import BodyModel, posed_vertices
from ..mesh import face_areas, sample_surface
from .oracle import InsideOracle


def padded_bbox(vertices: np.ndarray, padding: float = 0.1):
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    pad = padding * (hi - lo)
    return lo - pad, hi + pad


def sample_uniform(lo, hi, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(lo, hi, size=(n, 3))


def sample_near_surface(vertices, faces, n: int, rng: np.random.Generator,
                        sigma: float = 0.1) -> np.ndarray:
    """Area-uniform surface points plus isotropic Gaussian noise of std ``sigma``."""
    pts, _, _ = sample_surface(vertices, faces, n, rng)
    return pts + rng.normal(scale=sigma, size=pts.shape)


def sample_mixture(vertices, faces, n: int, rng: np.random.Generator, padding: float = 0.1,
                   sigma: float = 0.1) -> np.ndarray:
    """n/2 uniform points in the padded box followed by n/2 near-surface points."""
    if n % 2:
        raise ValueError("the number of sampled points must be even")
    if not face_areas(vertices, faces).sum() > 0:
        raise ValueError("cannot sample a degenerate (zero-area) mesh")
    lo, hi = padded_bbox(vertices, padding)
    return np.concatenate([sample_uniform(lo, hi, n // 2, rng),
                           sample_near_surface(vertices, faces, n // 2, rng, sigma)])


def nearest_vertex(points: np.ndarray, vertices: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    """Index of the nearest vertex; exact ties resolve to the lowest index."""
    tree = tree or cKDTree(vertices)
    k = min(4, len(vertices))
    _, idx = tree.query(points, k=k)
    idx = idx.reshape(len(points), k)
    d = np.sum((vertices[idx] - points[:, None, :]) ** 2, axis=-1)
    cand = np.where(d == d.min(axis=1, keepdims=True), idx, np.iinfo(np.int64).max)
    return cand.min(axis=1)


@dataclass
class TrainingSamples:
    points: np.ndarray  # [n, 3]
    occupancy: np.ndarray  # [n] bool
    nearest: np.ndarray  # [n] nearest vertex index (pseudo ground-truth weights)
    space: str  # "posed" or "canonical"

    def weights(self, body: BodyModel) -> np.ndarray:
        return body.weights[self.nearest]


def label_points(points, vertices, faces, space: str, oracle: InsideOracle | None = None,
                 tree: cKDTree | None = None) -> TrainingSamples:
    oracle = oracle or InsideOracle(vertices, faces)
    return TrainingSamples(points, oracle(points), nearest_vertex(points, vertices, tree), space)


def sample_training_points(body: BodyModel, betas, rotations, n: int, seed,
                           translation=None, padding: float = 0.1,
                           sigma: float = 0.1) -> TrainingSamples:
    """Posed-space training samples for one pose, labelled and with pseudo-GT weights."""
    rng = np.random.default_rng(seed)
    V = posed_vertices(body, betas, rotations, translation).data
    pts = sample_mixture(V, body.faces, n, rng, padding, sigma)
    return label_points(pts, V, body.faces, "posed")
