"""Ground-truth inside/outside tests for closed triangle meshes.

``inside_mesh`` counts ray crossings along three fixed directions and takes
a majority vote; ``winding_number`` sums signed solid angles and serves as an
independent cross-check.
"""

from __future__ import annotations

import numpy as np

from ..mesh import boundary_edges

# fixed, irrational-looking directions so rays rarely graze edges
_DIRECTIONS = np.array([
    [0.5377, 0.8622, 0.1294],
    [-0.6821, 0.2319, 0.6937],
    [0.1833, -0.7415, 0.6456],
])
_DIRECTIONS /= np.linalg.norm(_DIRECTIONS, axis=1, keepdims=True)


class MeshNotWatertight(ValueError):
    pass


def _basis(d: np.ndarray) -> np.ndarray:
    """Rows (u, v, d): an orthonormal frame whose third axis is d."""
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, a)
    u /= np.linalg.norm(u)
    return np.stack([u, np.cross(d, u), d])


class _RayIndex:
    """Triangles projected along one direction and binned on a 2-d grid."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, direction: np.ndarray):
        self.frame = _basis(direction)
        tri = vertices[faces] @ self.frame.T  # [F, 3, 3] in (u, v, h)
        self.tri = tri
        lo2, hi2 = tri[..., :2].min(axis=(0, 1)), tri[..., :2].max(axis=(0, 1))
        n = max(1, int(np.sqrt(len(faces))))
        self.lo, self.n = lo2, n
        self.cell = np.maximum(hi2 - lo2, 1e-12) / n
        tlo = np.floor((tri[..., :2].min(axis=1) - lo2) / self.cell).astype(np.int64)
        thi = np.floor((tri[..., :2].max(axis=1) - lo2) / self.cell).astype(np.int64)
        tlo, thi = np.clip(tlo, 0, n - 1), np.clip(thi, 0, n - 1)
        cells, tris = [], []
        spans = thi - tlo + 1
        for f in range(len(faces)):
            ix = np.arange(tlo[f, 0], thi[f, 0] + 1)
            iy = np.arange(tlo[f, 1], thi[f, 1] + 1)
            cells.append((ix[:, None] * n + iy[None, :]).ravel())
            tris.append(np.full(spans[f, 0] * spans[f, 1], f))
        cells, tris = np.concatenate(cells), np.concatenate(tris)
        order = np.argsort(cells, kind="stable")
        self.tri_of = tris[order]
        self.start = np.searchsorted(cells[order], np.arange(n * n + 1))
        self.scale = float(np.abs(tri).max()) or 1.0

    def crossings(self, points: np.ndarray):
        """(crossing parity, ambiguous-edge flag, on-surface flag) per point."""
        q = points @ self.frame.T
        c = np.floor((q[:, :2] - self.lo) / self.cell).astype(np.int64)
        valid = np.all((c >= 0) & (c < self.n), axis=1)
        cid = np.where(valid, c[:, 0] * self.n + c[:, 1], 0)
        counts = np.where(valid, self.start[cid + 1] - self.start[cid], 0)
        pidx = np.repeat(np.arange(len(points)), counts)
        offs = np.arange(len(pidx)) - np.repeat(np.cumsum(counts) - counts, counts)
        fidx = self.tri_of[self.start[cid[pidx]] + offs]
        t = self.tri[fidx]
        p = q[pidx]
        a, b, cc = t[:, 0], t[:, 1], t[:, 2]

        def edge(s, e):
            return (e[:, 0] - s[:, 0]) * (p[:, 1] - s[:, 1]) - (e[:, 1] - s[:, 1]) * (p[:, 0] - s[:, 0])

        e0, e1, e2 = edge(a, b), edge(b, cc), edge(cc, a)
        area = e0 + e1 + e2
        eps = 1e-12 * self.scale**2
        nondegenerate = np.abs(area) > eps
        inside2d = nondegenerate & (
            ((e0 > eps) & (e1 > eps) & (e2 > eps)) | ((e0 < -eps) & (e1 < -eps) & (e2 < -eps)))
        grazing = nondegenerate & ~inside2d & (np.minimum.reduce([np.abs(e0), np.abs(e1), np.abs(e2)]) <= eps) \
            & ~(((e0 > eps) | (e1 > eps) | (e2 > eps)) & ((e0 < -eps) | (e1 < -eps) | (e2 < -eps)))
        safe = np.where(nondegenerate, area, 1.0)
        h = (e1 * a[:, 2] + e2 * b[:, 2] + e0 * cc[:, 2]) / safe
        dh = h - p[:, 2]
        on_surface = (inside2d | grazing) & (np.abs(dh) < 1e-9)
        hit = inside2d & (dh > 0)
        amb = grazing & (dh > 0)
        n = len(points)
        parity = np.bincount(pidx[hit], minlength=n) % 2
        ambiguous = np.bincount(pidx[amb], minlength=n) > 0
        surface = np.bincount(pidx[on_surface], minlength=n) > 0
        return parity.astype(bool), ambiguous, surface


class InsideOracle:
    """Reusable inside test for one closed mesh."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, max_retries: int = 8):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if len(faces) == 0 or len(boundary_edges(faces)):
            raise MeshNotWatertight("inside test needs a watertight mesh (found boundary edges)")
        self.indices = [_RayIndex(vertices, faces, d) for d in _DIRECTIONS]
        self.max_retries = max_retries
        self.jitter = 1e-7 * max(1.0, float(np.abs(vertices).max()))

    def __call__(self, points, chunk: int = 20000) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        flat = points.reshape(-1, 3)
        out = np.empty(len(flat), dtype=bool)
        for s in range(0, len(flat), chunk):
            out[s:s + chunk] = self._query(flat[s:s + chunk])
        return out.reshape(points.shape[:-1])

    def _query(self, pts: np.ndarray) -> np.ndarray:
        result = np.zeros(len(pts), dtype=bool)
        todo = np.arange(len(pts))
        rng = np.random.default_rng(0)
        q = pts.copy()
        for _ in range(self.max_retries + 1):
            votes = np.zeros(len(todo), dtype=np.int64)
            valid = np.zeros(len(todo), dtype=np.int64)
            retry = np.zeros(len(todo), dtype=bool)
            for index in self.indices:
                parity, amb, surf = index.crossings(q[todo])
                ok = ~amb
                votes += parity & ok
                valid += ok
                retry |= surf
            decided = ~retry & (valid > 0) & (2 * votes != valid)
            result[todo[decided]] = 2 * votes[decided] > valid[decided]
            todo = todo[~decided]
            if len(todo) == 0:
                return result
            q[todo] += rng.normal(scale=self.jitter, size=(len(todo), 3))
        raise RuntimeError(f"inside test undecided for {len(todo)} points after retries")


def inside_mesh(points, vertices, faces) -> np.ndarray:
    """Boolean inside flags for points [..., 3] against a watertight mesh."""
    return InsideOracle(vertices, faces)(points)


def winding_number(points, vertices, faces, chunk: int = 512) -> np.ndarray:
    """Generalised winding number (sum of signed solid angles / 4π) per point."""
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 3)
    tri = np.asarray(vertices, dtype=np.float64)[np.asarray(faces)]
    out = np.empty(len(flat))
    for s in range(0, len(flat), chunk):
        p = flat[s:s + chunk, None, None, :]
        r = tri[None] - p  # [P, F, 3, 3]
        a, b, c = r[:, :, 0], r[:, :, 1], r[:, :, 2]
        la, lb, lc = (np.linalg.norm(v, axis=-1) for v in (a, b, c))
        det = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pfi,pfi->pf", a, b) * lc
               + np.einsum("pfi,pfi->pf", b, c) * la + np.einsum("pfi,pfi->pf", c, a) * lb)
        out[s:s + chunk] = 2.0 * np.arctan2(det, den).sum(axis=1) / (4.0 * np.pi)
    return out.reshape(points.shape[:-1])
