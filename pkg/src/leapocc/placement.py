"""Collision-driven placement of a body among obstacles.

Obstacles (scene geometry and other bodies) are point clouds.  Each point
that the movable body's occupancy function places inside contributes a
clamped excess ``clamp(f - 0.5, 0, 1)``; the body's global translation is
optimised with Adam until no point is inside or the step budget runs out.

The occupancy function is translation equivariant (all network inputs are
root-relative), so querying the body at translation ``t0 + dt`` equals
querying the body at ``t0`` with the points shifted by ``-dt``.  The body
codes are therefore computed once and only the query points move.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, F, Tape, Value, backward
from .body import bone_transforms
from .mesh import Mesh, box_mesh, face_cross, sample_surface, vertex_normals
from .occupancy import BodyContext, OccupancyModel, extract_isosurface
from .training.oracle import InsideOracle

log = logging.getLogger(__name__)

DEFAULT_DEPTHS = (0.01, 0.03, 0.05)


class PlacementDiverged(RuntimeError):
    pass


@dataclass
class ScenePoints:
    points: np.ndarray  # [M, 3]
    normals: np.ndarray | None = None  # [M, 3] unit
    source: str = "scene"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points")
            if len(self.normals) and np.abs(np.linalg.norm(self.normals, axis=1) - 1).max() > 1e-6:
                raise ValueError("normals must have unit length")


def point_based_loss(probability) -> Value:
    """Per-point penetration penalty: 0 below 0.5, f - 0.5 in the band, 1 above 1.5."""
    return F.clip(F.sub(probability, 0.5), 0.0, 1.0)


def offset_points(points, normals, depths=DEFAULT_DEPTHS, source: str = "scene") -> ScenePoints:
    """Surface points followed by copies pushed inward (against the normal) by each depth."""
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    norm = np.linalg.norm(normals, axis=1)
    good = norm > 1e-12
    if not np.all(good):
        log.warning("skipping %d points with degenerate normals", int(np.count_nonzero(~good)))
    p, n = points[good], normals[good] / norm[good, None]
    layers = [p] + [p - d * n for d in depths]
    return ScenePoints(np.concatenate(layers), np.concatenate([n] * len(layers)), source)


def offset_scene_points(mesh: Mesh, depths=DEFAULT_DEPTHS) -> ScenePoints:
    """Mesh vertices plus, per vertex, points at each depth along the inward normal."""
    return offset_points(mesh.vertices, vertex_normals(mesh.vertices, mesh.faces), depths)


def body_points(mesh: Mesh, n: int, rng: np.random.Generator, depths=DEFAULT_DEPTHS,
                source: str = "body") -> ScenePoints:
    """Body surface points with inward offsets.

    ``n <= 0`` (or at least the vertex count) takes every mesh vertex, so the
    optimised points are exactly the vertices the collision scores test;
    otherwise ``n`` area-uniform surface samples are drawn.
    """
    if n <= 0 or n >= len(mesh.vertices):
        return offset_points(mesh.vertices, vertex_normals(mesh.vertices, mesh.faces), depths,
                             source)
    pts, fidx, _ = sample_surface(mesh.vertices, mesh.faces, n, rng)
    fn = face_cross(mesh.vertices, mesh.faces)[fidx]
    return offset_points(pts, fn, depths, source)


@dataclass
class PlacementProblem:
    model: OccupancyModel
    context: BodyContext  # movable body at its initial translation
    obstacles: list  # ScenePoints
    lr: float = 1e-2
    max_steps: int = 1000
    divergence_factor: float = 10.0

    def points(self) -> np.ndarray:
        return np.concatenate([o.points for o in self.obstacles]) if self.obstacles \
            else np.zeros((0, 3))

    def scene_diameter(self) -> float:
        body = self.context.posed_world.reshape(-1, 3)
        pts = np.concatenate([self.points(), body])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass
class PlacementResult:
    translation: np.ndarray  # offset from the initial placement
    iterations: int
    losses: list = field(default_factory=list)
    converged: bool = False


def placement_loss(model: OccupancyModel, ctx: BodyContext, points: np.ndarray, dt: Value,
                   chunk: int = 8192) -> Value:
    """Summed penetration penalty of obstacle points against the body moved by dt."""
    total = None
    for s in range(0, len(points), chunk):
        x = F.sub(points[s:s + chunk].astype(model.dtype), dt)
        prob, _, _, _ = model.forward(ctx, x, training=False)
        part = F.sum(point_based_loss(prob))
        total = part if total is None else F.add(total, part)
    return total if total is not None else Value(0.0)


def optimize_translation(problem: PlacementProblem, init=None) -> PlacementResult:
    """Adam on the body translation until no obstacle point is inside (or the cap)."""
    model, ctx = problem.model, problem.context
    points = problem.points()
    t = np.zeros(3, dtype=model.dtype) if init is None else np.asarray(init, model.dtype).copy()
    opt = Adam(lr=problem.lr)
    limit = problem.divergence_factor * problem.scene_diameter()
    losses = []
    for it in range(problem.max_steps + 1):
        dt = Value(t, requires_grad=True)
        with Tape() as tape:
            loss = placement_loss(model, ctx, points, dt)
        value = float(loss.item())
        losses.append(value)
        if value == 0.0:
            return PlacementResult(t.astype(np.float64), it, losses, True)
        if it == problem.max_steps:
            break
        backward(tape, loss)
        params = {"t": t}
        opt.step(params, {"t": dt.grad_or_zeros()})
        if not np.all(np.isfinite(t)) or np.linalg.norm(t) > limit:
            raise PlacementDiverged(f"translation diverged at step {it + 1}: |t| = "
                                    f"{np.linalg.norm(t):.3g} > {limit:.3g}")
    return PlacementResult(t.astype(np.float64), problem.max_steps, losses, False)


def _inside_any(points: np.ndarray, meshes: list) -> np.ndarray:
    hit = np.zeros(len(points), dtype=bool)
    for m in meshes:
        if m.is_empty():
            continue
        hit |= InsideOracle(m.vertices, m.faces)(points)
    return hit


def collision_scores(bodies: list, scene: Mesh | None = None) -> tuple[float, float, float]:
    """(human-scene %, scene-human %, human-human %) by vertex inside tests."""
    body_verts = [b.vertices for b in bodies if not b.is_empty()]
    hs = sh = 0.0
    if scene is not None and not scene.is_empty() and body_verts:
        allv = np.concatenate(body_verts)
        hs = 100.0 * float(np.mean(_inside_any(allv, [scene])))
        sh = 100.0 * float(np.mean(_inside_any(scene.vertices, bodies)))
    pair_scores = []
    for i, bi in enumerate(bodies):
        for j, bj in enumerate(bodies):
            if i == j or bi.is_empty() or bj.is_empty():
                continue
            pair_scores.append(100.0 * float(np.mean(_inside_any(bi.vertices, [bj]))))
    hh = float(np.mean(pair_scores)) if pair_scores else 0.0
    return hs, sh, hh


def box_beside(movable: Mesh, fixed: Mesh, size, overlap: float, margin: float = 0.02,
               subdivisions: int = 6) -> Mesh:
    """Box in front (+z) of the part of the movable body that lies beyond the fixed
    body along +x, sunk ``overlap`` into it.  The box never touches the fixed body,
    so it can always be cleared by moving the movable body."""
    size = np.asarray(size, dtype=float)
    x_lo = fixed.vertices[:, 0].max() + margin
    region = movable.vertices[movable.vertices[:, 0] > x_lo]
    if len(region) == 0:
        raise ValueError("the movable body does not extend beyond the fixed body along +x")
    y_mid = 0.5 * (region[:, 1].min() + region[:, 1].max())
    z_lo = region[:, 2].max() - overlap
    lo = np.array([x_lo, y_mid - size[1] / 2, z_lo])
    return box_mesh(lo, lo + size, subdivisions)


@dataclass
class TwoBodyReport:
    before: tuple
    after: tuple
    result: PlacementResult
    scene: Mesh
    fixed: Mesh
    movable: Mesh  # at its final placement


def place_two_bodies(model: OccupancyModel, betas, fixed_rotations, movable_rotations,
                     offset, cfg, rng: np.random.Generator, scene: Mesh | None = None
                     ) -> TwoBodyReport:
    """Resolve collisions of a movable body against a fixed body and a scene obstacle.

    ``cfg`` is a placement config (lr, max_steps, depths, body_points,
    divergence_factor, box_size, box_overlap, resolution).  Both bodies are
    represented by meshes extracted from the occupancy model.
    """
    body = model.body
    ts_fixed = bone_transforms(body, betas, fixed_rotations)
    ts_move = bone_transforms(body, betas, movable_rotations, np.asarray(offset, float))
    fixed = extract_isosurface(model, ts_fixed, cfg.resolution)
    movable = extract_isosurface(model, ts_move, cfg.resolution)
    if fixed.is_empty() or movable.is_empty():
        raise ValueError("the occupancy model produced an empty body surface")
    if scene is None:
        scene = box_beside(movable, fixed, cfg.box_size, cfg.box_overlap)
    before = collision_scores([movable, fixed], scene)
    obstacles = [body_points(fixed, cfg.body_points, rng, cfg.depths, "body-1"),
                 offset_scene_points(scene, cfg.depths)]
    problem = PlacementProblem(model, model.context(ts_move), obstacles, cfg.lr,
                               cfg.max_steps, cfg.divergence_factor)
    result = optimize_translation(problem)
    moved = Mesh(movable.vertices + result.translation, movable.faces)
    after = collision_scores([moved, fixed], scene)
    return TwoBodyReport(before, after, result, scene, fixed, moved)
