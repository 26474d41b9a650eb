"""Volumetric IOU on sampled points and surface Chamfer distance."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import Mesh, sample_surface


def iou_from_labels(predicted, truth) -> float:
    """Intersection over union of two boolean inside sets, in percent."""
    predicted, truth = np.asarray(predicted, bool), np.asarray(truth, bool)
    union = np.count_nonzero(predicted | truth)
    if union == 0:
        raise ValueError("IOU undefined: no point is inside either shape")
    return 100.0 * np.count_nonzero(predicted & truth) / union


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbour distance between point sets, x 1e4."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Chamfer distance of an empty point set")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(0.5 * (np.mean(da**2) + np.mean(db**2)) * 1e4)


def eval_chamfer(pred: Mesh, gt: Mesh, samples: int = 10_000, seed=0) -> float:
    if pred.is_empty() or gt.is_empty():
        raise ValueError("Chamfer distance needs non-empty meshes")
    rng = np.random.default_rng(seed)
    pa, _, _ = sample_surface(pred.vertices, pred.faces, samples, rng)
    pb, _, _ = sample_surface(gt.vertices, gt.faces, samples, rng)
    return chamfer_distance(pa, pb)
