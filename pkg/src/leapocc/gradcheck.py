"""Finite-difference verification of the full occupancy pipeline.

For one query point the probability is differentiated analytically with
respect to every parameter tensor and compared with central differences.
Large tensors are spot-checked on a random subset of entries.  Parameters
are re-drawn from a scaled normal so that no layer sits at its special
initialisation (zero residual branches, identity batch-norm scales).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, backward
from .autodiff.gradcheck import rel_error
from .body import bone_transforms, make_synthetic_model, rodrigues, sample_pose
from .io.config import NetworkConfig
from .occupancy import OccupancyModel

TOLERANCE = 1e-4
ABS_FLOOR = 1e-6  # gradients below this magnitude are compared absolutely


@dataclass
class GradcheckReport:
    seed: int
    checked: int
    passed: int
    max_rel_error: float
    worst: str

    @property
    def fraction(self) -> float:
        return self.passed / max(self.checked, 1)


def small_network() -> NetworkConfig:
    return NetworkConfig(onet_hidden=16, onet_blocks=2, lbs_hidden=16, lbs_blocks=2,
                         pointnet_hidden=8, pointnet_blocks=2, shape_width=16, cfwd_width=12,
                         pose_feature_width=8)


def _randomise(model: OccupancyModel, rng: np.random.Generator) -> None:
    for value in model.store.params.values():
        fan_in = value.shape[-1] if value.ndim > 1 else 1
        value.data[...] = rng.normal(scale=1.0 / np.sqrt(fan_in), size=value.shape)
    for name, buf in model.store.buffers.items():
        if name.endswith("running_var"):
            buf[...] = rng.uniform(0.5, 2.0, size=buf.shape)
        else:
            buf[...] = rng.normal(scale=0.3, size=buf.shape)


def check_pipeline(seed: int, body=None, net: NetworkConfig | None = None,
                   entries_per_tensor: int = 2, h: float = 1e-6) -> GradcheckReport:
    """Gradient check of the probability of one random query point."""
    rng = np.random.default_rng(seed)
    body = body or make_synthetic_model(0)
    model = OccupancyModel(body, net or small_network(), seed=seed, dtype=np.float64)
    _randomise(model, rng)
    ts = bone_transforms(body, rng.normal(size=body.n_betas), rodrigues(sample_pose(rng)))
    x = ts.G.data[rng.integers(body.n_joints), :3, 3] + rng.normal(scale=0.05, size=3)

    def prob(ctx=None):
        ctx = ctx or model.context(ts)
        p, _, _, _ = model.forward(ctx, x[None], training=False)
        return p[0]

    with Tape() as tape:
        out = prob()
    backward(tape, out)
    analytic = {k: v.grad_or_zeros().copy() for k, v in model.store.params.items()}
    model.store.zero_grad()

    checked = passed = 0
    worst, worst_err = "", 0.0
    fixed_ctx = model.context(ts)
    for name, value in model.store.params.items():
        # decoder weights do not feed the per-pose context; a wrong assumption here
        # would drop terms from the numeric side and show up as failures
        ctx = fixed_ctx if name.startswith("onet.") else None
        flat = value.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up = prob(ctx).item()
            flat[i] = orig - h
            down = prob(ctx).item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[name].reshape(-1)[i]
            err = float(rel_error(np.array([a]), np.array([numeric]), floor=ABS_FLOOR)[0])
            checked += 1
            passed += err < TOLERANCE
            if err > worst_err:
                worst, worst_err = f"{name}[{i}]", err
    return GradcheckReport(seed, checked, passed, worst_err, worst)


def run_suite(seeds=range(5), entries_per_tensor: int = 2) -> list[GradcheckReport]:
    body = make_synthetic_model(0)
    return [check_pipeline(s, body, entries_per_tensor=entries_per_tensor) for s in seeds]
