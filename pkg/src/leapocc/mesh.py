"""Triangle-mesh helpers shared by the body model, oracles and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mesh:
    vertices: np.ndarray  # [V, 3]
    faces: np.ndarray  # [F, 3] int
    normals: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return self.n_faces == 0

    def translated(self, t) -> "Mesh":
        return Mesh(self.vertices + np.asarray(t, dtype=float), self.faces.copy())

    def vertex_normals(self) -> np.ndarray:
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.faces)
        return self.normals

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def triangles(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return vertices[faces]  # [F, 3, 3]


def face_cross(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(vertices, faces), axis=1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals (zero for isolated vertices)."""
    fn = face_cross(vertices, faces)
    vn = np.zeros_like(vertices)
    for c in range(3):
        np.add.at(vn, faces[:, c], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return np.divide(vn, norm, out=np.zeros_like(vn), where=norm > 0)


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    tri = vertices[faces]
    return float(np.einsum("fi,fi->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0)


def boundary_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges not shared by exactly two faces."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts != 2]


def is_watertight(faces: np.ndarray) -> bool:
    """Closed 2-manifold edge structure with consistent orientation."""
    faces = np.asarray(faces)
    if len(faces) == 0:
        return False
    if len(boundary_edges(faces)):
        return False
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return len(np.unique(directed, axis=0)) == len(directed)


def sample_surface(vertices: np.ndarray, faces: np.ndarray, n: int,
                   rng: np.random.Generator):
    """Area-uniform surface samples; returns (points, face index, barycentrics)."""
    areas = face_areas(vertices, faces)
    total = areas.sum()
    if not total > 0:
        raise ValueError("cannot sample a zero-area mesh")
    fidx = rng.choice(len(faces), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    tri = vertices[faces[fidx]]
    pts = np.einsum("pc,pcd->pd", bary, tri)
    return pts, fidx, bary


def segment_triangle_hits(p0: np.ndarray, p1: np.ndarray, tri: np.ndarray,
                          eps: float = 1e-12) -> np.ndarray:
    """Boolean [S, F]: does segment s cross the interior of triangle f."""
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    d = p1 - p0  # [S, 3]
    pvec = np.cross(d[:, None, :], e2[None, :, :])
    det = np.einsum("fd,sfd->sf", e1, pvec)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = p0[:, None, :] - v0[None, :, :]
    u = np.einsum("sfd,sfd->sf", tvec, pvec) * inv
    qvec = np.cross(tvec, e1[None, :, :])
    v = np.einsum("sd,sfd->sf", d, qvec) * inv
    t = np.einsum("fd,sfd->sf", e2, qvec) * inv
    return ok & (u > 0) & (v > 0) & (u + v < 1) & (t > 0) & (t < 1)


def self_intersections(vertices: np.ndarray, faces: np.ndarray, chunk: int = 256) -> int:
    """Count (edge, face) crossings between topologically disjoint elements."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    tri = vertices[faces]
    lo, hi = tri.min(axis=1), tri.max(axis=1)
    hits = 0
    for s in range(0, len(e), chunk):
        ec = e[s:s + chunk]
        a, b = vertices[ec[:, 0]], vertices[ec[:, 1]]
        elo, ehi = np.minimum(a, b), np.maximum(a, b)
        overlap = np.all((elo[:, None] <= hi[None]) & (ehi[:, None] >= lo[None]), axis=2)
        shares = np.zeros_like(overlap)
        for c in range(3):
            shares |= (faces[None, :, c] == ec[:, 0:1]) | (faces[None, :, c] == ec[:, 1:2])
        cand = overlap & ~shares
        si, fi = np.nonzero(cand)
        if len(si) == 0:
            continue
        v0 = tri[fi, 0]
        e1, e2 = tri[fi, 1] - v0, tri[fi, 2] - v0
        d = b[si] - a[si]
        pvec = np.cross(d, e2)
        det = np.einsum("nd,nd->n", e1, pvec)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = a[si] - v0
        u = np.einsum("nd,nd->n", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("nd,nd->n", d, qvec) * inv
        t = np.einsum("nd,nd->n", e2, qvec) * inv
        hits += int(np.count_nonzero(ok & (u > 0) & (v > 0) & (u + v < 1) & (t > 0) & (t < 1)))
    return hits


def box_mesh(lo, hi, subdivisions: int = 1) -> Mesh:
    """Closed axis-aligned box, each face split into ``subdivisions``^2 quads."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    n = subdivisions
    verts: list = []
    faces: list = []
    index: dict = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    g = np.linspace(0.0, 1.0, n + 1)
    for axis in range(3):
        for side in (0, 1):
            a1, a2 = (axis + 1) % 3, (axis + 2) % 3
            grid = np.empty((n + 1, n + 1), dtype=int)
            for i, s in enumerate(g):
                for j, t in enumerate(g):
                    p = np.empty(3)
                    p[axis] = hi[axis] if side else lo[axis]
                    p[a1] = lo[a1] + s * (hi[a1] - lo[a1])
                    p[a2] = lo[a2] + t * (hi[a2] - lo[a2])
                    grid[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    q = (grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1])
                    if side:
                        faces += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
                    else:
                        faces += [(q[0], q[2], q[1]), (q[0], q[3], q[2])]
    return Mesh(np.array(verts), np.array(faces))


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(np.array(verts) * radius + np.asarray(center, dtype=float), np.array(faces))
