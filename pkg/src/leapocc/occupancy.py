"""The articulated occupancy function and isosurface extraction.

A query point is pulled into canonical space with the inverse skinning
network, re-skinned with the forward network to measure the cycle distance,
and decoded together with a blend of per-bone codes into an inside
probability.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from skimage.measure import marching_cubes

from .autodiff import F, ParameterStore, Value, as_value
from .body import BodyModel, BoneTransformSet, estimate_vertices_from_transforms
from .encoders import GlobalEncoder, SkinningConditioning
from .io.config import NetworkConfig
from .mesh import Mesh
from .networks import ConditionedDecoder
from .skinning import (
    LbsNet,
    canonicalize_point,
    cycle_distance,
    local_point_code,
    pseudo_gt_weights,
)


@dataclass
class BodyContext:
    """Per-body quantities shared by every query against the same transforms."""

    transforms: BoneTransformSet
    root: Value  # posed root joint [..., 3]
    rest_root: Value  # rest root joint [..., 3]
    canonical: Value  # estimated canonical vertices, rest-root centred [..., N, 3]
    posed: Value  # estimated posed vertices, posed-root centred [..., N, 3]
    posed_world: np.ndarray  # estimated posed vertices in world coordinates
    c_fwd: Value | None = None
    c_inv: Value | None = None
    z: Value | None = None
    bone_codes: Value | None = None


@dataclass
class QueryResult:
    probability: np.ndarray
    inside: np.ndarray  # probability >= 0.5
    canonical: np.ndarray
    cycle: np.ndarray
    weights: np.ndarray


def cast_transforms(ts: BoneTransformSet, dtype) -> BoneTransformSet:
    names = ("G", "B", "joints", "lengths", "rotations", "translation")
    return BoneTransformSet(**{n: _cast(getattr(ts, n), dtype) for n in names})


class OccupancyModel:
    """Encoders, bone projections, skinning networks and the occupancy decoder.

    Parameter prefixes: ``lbs.`` (skinning networks and their conditioning,
    trained in the first stage), ``enc.`` and ``onet.`` (trained in the
    second stage with ``lbs.`` frozen).
    """

    def __init__(self, body: BodyModel, net: NetworkConfig | None = None, seed: int = 0,
                 dtype=np.float64):
        self.body = body
        self.net = net or NetworkConfig()
        self.seed = seed
        self.store = ParameterStore(dtype)
        self.dtype = self.store.dtype
        rng = np.random.default_rng(seed)
        K = body.n_joints
        n = self.net
        self.conditioning = SkinningConditioning(
            self.store, "lbs.cond", K, rng, n.cfwd_width, n.pose_feature_width,
            n.pointnet_hidden, n.pointnet_blocks)
        self.inv_net = LbsNet(self.store, "lbs.inv", self.conditioning.inv_width, K,
                              n.lbs_hidden, rng, n.lbs_blocks)
        self.fwd_net = LbsNet(self.store, "lbs.fwd", self.conditioning.fwd_width, K,
                              n.lbs_hidden, rng, n.lbs_blocks)
        self.encoder = GlobalEncoder(
            self.store, "enc", body.parents, rng, n.encoders, n.shape_width,
            n.structure_width, n.bone_code, n.pointnet_hidden, n.pointnet_blocks)
        self.onet = ConditionedDecoder(self.store, "onet", n.bone_code + 1, n.onet_hidden, 1,
                                       rng, n.onet_blocks)

    # ------------------------------------------------------------ hyperparameters

    def hyperparameters(self) -> dict:
        return {"n_joints": self.body.n_joints, "n_vertices": self.body.n_vertices,
                "n_betas": self.body.n_betas, "seed": self.seed,
                "dtype": self.dtype.name, "network": asdict(self.net)}

    # ------------------------------------------------------------ per-body context

    def context(self, transforms: BoneTransformSet, skinning: bool = True,
                codes: bool = True, training: bool = False) -> BodyContext:
        ts = cast_transforms(transforms, self.dtype)
        canon, posed = estimate_vertices_from_transforms(self.body, transforms)
        canon, posed = _cast(canon, self.dtype), _cast(posed, self.dtype)
        root = ts.root_location
        rest_root = ts.joints[..., 0, :]
        ctx = BodyContext(
            transforms=ts, root=root, rest_root=rest_root,
            canonical=F.sub(canon, F.expand_dims(rest_root, -2)),
            posed=F.sub(posed, F.expand_dims(root, -2)),
            posed_world=posed.data,
        )
        if skinning:
            self.add_skinning_codes(ctx)
        if codes:
            self.add_body_codes(ctx)
        return ctx

    def add_skinning_codes(self, ctx: BodyContext) -> None:
        ctx.c_fwd = self.conditioning.forward(ctx.canonical, ctx.posed)
        ctx.c_inv = self.conditioning.inverse(ctx.c_fwd, ctx.transforms.rotations,
                                              ctx.transforms.joints)

    def add_body_codes(self, ctx: BodyContext) -> None:
        ctx.z = self.encoder.code(ctx.transforms, ctx.canonical, ctx.posed)
        ctx.bone_codes = self.encoder.bone_codes(ctx.z)

    # ------------------------------------------------------------ pipeline stages

    def inverse_weights(self, ctx: BodyContext, x, training: bool = False) -> Value:
        """Skinning weights of posed points x [..., P, 3] (world coordinates)."""
        local = F.sub(x, F.expand_dims(ctx.root, -2))
        return self.inv_net(local, F.expand_dims(ctx.c_inv, -2), training)

    def forward_weights(self, ctx: BodyContext, xc, training: bool = False) -> Value:
        """Skinning weights of canonical points xc [..., P, 3] (model coordinates)."""
        local = F.sub(xc, F.expand_dims(ctx.rest_root, -2))
        return self.fwd_net(local, F.expand_dims(ctx.c_fwd, -2), training)

    def decode(self, ctx: BodyContext, xc, weights, cycle, training: bool = False) -> Value:
        """Inside probability from canonical points, their weights and cycle distances."""
        z_x = local_point_code(weights, ctx.bone_codes)
        cond = F.concat([z_x, F.expand_dims(as_value(cycle), -1)], axis=-1)
        local = F.sub(xc, F.expand_dims(ctx.rest_root, -2))
        logit = self.onet(local, cond, training)
        return F.sigmoid(logit[..., 0])

    def forward(self, ctx: BodyContext, x, weights: str = "network",
                cycle: str = "forward", training: bool = False):
        """Full query; returns (probability, canonical points, cycle distance, weights).

        ``weights="pseudo_gt"`` replaces the inverse network by nearest-vertex
        skinning weights; ``cycle="zero"`` then drops the forward network.
        """
        x = _cast(as_value(x), self.dtype)
        if weights == "network":
            w = self.inverse_weights(ctx, x, training)
        elif weights == "pseudo_gt":
            w = Value(_batched_pseudo_gt(ctx.posed_world, self.body.weights, x.data)
                      .astype(self.dtype))
        else:
            raise ValueError(f"unknown weight source {weights!r}")
        xc = canonicalize_point(x, w, ctx.transforms.B)
        if cycle == "forward":
            d = cycle_distance(w, self.forward_weights(ctx, xc, training))
        elif cycle == "zero":
            d = Value(np.zeros(x.shape[:-1], dtype=self.dtype))
        else:
            raise ValueError(f"unknown cycle mode {cycle!r}")
        prob = self.decode(ctx, xc, w, d, training)
        return prob, xc, d, w


def _cast(v: Value, dtype) -> Value:
    if v.dtype == dtype:
        return v
    if v.requires_grad:
        return F.mul(v, np.ones((), dtype=dtype))
    return Value(v.data.astype(dtype))


def _batched_pseudo_gt(vertices: np.ndarray, weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    if vertices.ndim == 2:
        return pseudo_gt_weights(x, vertices, weights)
    out = np.empty(x.shape[:-1] + (weights.shape[1],))
    for idx in np.ndindex(vertices.shape[:-2]):
        out[idx] = pseudo_gt_weights(x[idx], vertices[idx], weights)
    return out


def query_occupancy(model: OccupancyModel, x, transforms: BoneTransformSet,
                    chunk: int = 8192, weights: str = "network", cycle: str = "forward",
                    ctx: BodyContext | None = None) -> QueryResult:
    """Evaluate the occupancy function for points x [P, 3] against one body (eval mode)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    if transforms.batch_shape:
        raise ValueError("query_occupancy expects an unbatched BoneTransformSet")
    if transforms.n_joints != model.body.n_joints:
        raise ValueError(f"transforms have {transforms.n_joints} bones, model has "
                         f"{model.body.n_joints}")
    ctx = ctx or model.context(transforms)
    probs, canon, cyc, ws = [], [], [], []
    for s in range(0, len(pts), chunk):
        p, xc, d, w = model.forward(ctx, pts[s:s + chunk], weights, cycle, training=False)
        probs.append(p.data)
        canon.append(xc.data)
        cyc.append(d.data)
        ws.append(w.data)
    prob = np.concatenate(probs) if probs else np.zeros(0)
    res = QueryResult(
        probability=prob, inside=prob >= 0.5,
        canonical=np.concatenate(canon) if canon else np.zeros((0, 3)),
        cycle=np.concatenate(cyc) if cyc else np.zeros(0),
        weights=np.concatenate(ws) if ws else np.zeros((0, model.body.n_joints)),
    )
    if single:
        res = QueryResult(res.probability[0], res.inside[0], res.canonical[0], res.cycle[0],
                          res.weights[0])
    return res


def onet_forward(model: OccupancyModel, xc, z_x, d_x, training: bool = False) -> Value:
    """Decoder alone on canonical points with explicit codes (no centring)."""
    cond = F.concat([as_value(z_x), F.expand_dims(as_value(d_x), -1)], axis=-1)
    return F.sigmoid(model.onet(xc, cond, training)[..., 0])


# ---------------------------------------------------------------- isosurfaces


def default_bounds(body: BodyModel, transforms: BoneTransformSet, padding: float = 0.1):
    """Box of the estimated posed vertices, padded per axis by ``padding`` times its extent.

    This is the region the training and evaluation points are drawn from, so the
    field is never extracted where it was not trained.
    """
    _, posed = estimate_vertices_from_transforms(body, transforms)
    verts = posed.data.reshape(-1, 3)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    pad = padding * (hi - lo)
    return lo - pad, hi + pad


def extract_isosurface_from_field(field, bounds, resolution: int = 64,
                                  level: float = 0.5, chunk: int = 65536) -> Mesh:
    """Marching cubes on ``field(points [P,3]) -> values [P]`` sampled on a regular grid."""
    if resolution < 8:
        raise ValueError("isosurface resolution must be at least 8")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.concatenate([np.asarray(field(grid[s:s + chunk]), dtype=np.float64)
                             for s in range(0, len(grid), chunk)])
    volume = values.reshape((resolution,) * 3)
    if not volume.max() >= level:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    # an outside layer around the grid closes surfaces that reach the bounds
    volume = np.pad(volume, 1, constant_values=min(volume.min(), level) - 1.0)
    spacing = (hi - lo) / (resolution - 1)
    verts, faces, _, _ = marching_cubes(volume, level=level, spacing=tuple(spacing))
    # marching_cubes orients faces toward increasing values; flip so normals point
    # from inside (high probability) to outside
    return Mesh(verts + lo - spacing, faces[:, ::-1].astype(np.int64))


def extract_isosurface(model: OccupancyModel, transforms: BoneTransformSet,
                       resolution: int = 64, bounds=None, chunk: int = 8192) -> Mesh:
    bounds = bounds if bounds is not None else default_bounds(model.body, transforms)
    ctx = model.context(transforms)

    def field(points):
        return query_occupancy(model, points, transforms, chunk=chunk, ctx=ctx).probability

    return extract_isosurface_from_field(field, bounds, resolution, chunk=chunk * 8)
