"""Run configuration: TOML documents mapped onto typed sections.

Every key has a default; unknown sections or keys are rejected so typos
fail loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    seed: int = 0  # synthetic body model seed
    n_joints: int = 16
    n_vertices: int = 600
    n_betas: int = 8


@dataclass
class NetworkConfig:
    onet_hidden: int = 64  # desk-scale width
    onet_blocks: int = 5
    lbs_hidden: int = 64
    lbs_blocks: int = 5
    pointnet_hidden: int = 32
    pointnet_blocks: int = 3
    structure_width: int = 6
    bone_code: int = 12
    shape_width: int = 128
    cfwd_width: int = 100  # per point cloud; c_fwd is twice this
    pose_feature_width: int = 80
    encoders: list = field(default_factory=lambda: ["shape", "structure", "pose"])


@dataclass
class DataConfig:
    n_poses: int = 50
    n_heldout: int = 5
    beta_scale: float = 1.0
    pose_scale: float = 1.0
    pool_size: int = 16384  # cached training points per pose and space
    near_sigma: float = 0.1  # std of near-surface noise (variance 0.01)
    bbox_padding: float = 0.1


@dataclass
class TrainConfig:
    batch_poses: int = 4
    lr: float = 1e-4
    lbs_iters: int = 5000
    occ_iters: int = 10000
    inv_uniform: int = 512
    inv_surface: int = 512
    fwd_uniform: int = 256
    fwd_surface: int = 256
    occ_uniform: int = 768
    occ_posed_surface: int = 512
    occ_canonical_surface: int = 256
    dtype: str = "float32"
    log_every: int = 100
    heldout_points: int = 4096
    deterministic_weights: bool = False
    deterministic_cycle: str = "zero"  # or "forward": d_x from the forward net


@dataclass
class EvalConfig:
    n_points: int = 100_000
    chamfer_samples: int = 10_000
    resolution: int = 64
    chunk: int = 8192


@dataclass
class PlaceConfig:
    lr: float = 1e-2
    max_steps: int = 1000
    depths: list = field(default_factory=lambda: [0.01, 0.03, 0.05])
    body_points: int = 0  # surface samples per other body; 0 takes every vertex
    divergence_factor: float = 10.0
    poses: list = field(default_factory=lambda: [0, 0])  # held-out poses: fixed, movable
    offset: list = field(default_factory=lambda: [0.06, 0.0, 0.0])  # movable body start
    box_size: list = field(default_factory=lambda: [0.3, 0.6, 0.3])
    box_overlap: float = 0.05  # initial penetration of the box into the movable body
    resolution: int = 64


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    place: PlaceConfig = field(default_factory=PlaceConfig)
    seed: int = 0  # data sampling, initialization and optimization seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {key} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"[{section}] {key} must be a list")
        return list(value)
    return value


def config_from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    for name, value in doc.items():
        if name == "seed":
            cfg.seed = _coerce("", "seed", value, 0)
            continue
        if not hasattr(cfg, name) or not isinstance(value, dict):
            raise ConfigError(f"unknown config section {name!r}")
        section = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(section)}
        for key, v in value.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            setattr(section, key, _coerce(name, key, v, getattr(section, key)))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.train.dtype not in ("float32", "float64"):
        raise ConfigError("[train] dtype must be float32 or float64")
    if cfg.train.deterministic_cycle not in ("zero", "forward"):
        raise ConfigError("[train] deterministic_cycle must be 'zero' or 'forward'")
    bad = set(cfg.network.encoders) - {"shape", "structure", "pose"}
    if bad or not cfg.network.encoders:
        raise ConfigError("[network] encoders must be a non-empty subset of shape/structure/pose")
    if cfg.train.batch_poses < 1 or cfg.train.batch_poses > cfg.data.n_poses:
        raise ConfigError("[train] batch_poses must be between 1 and [data] n_poses")
    if len(cfg.place.poses) != 2 or len(cfg.place.offset) != 3 or len(cfg.place.box_size) != 3:
        raise ConfigError("[place] poses needs 2 entries; offset and box_size need 3")
    if cfg.model.n_joints <= cfg.model.n_betas:
        raise ConfigError("[model] n_joints must exceed n_betas")


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(Path(path), "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)
