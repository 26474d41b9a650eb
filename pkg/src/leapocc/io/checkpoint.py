"""Body-model files and training checkpoints in the shared container format."""

from __future__ import annotations

import numpy as np

from ..body import BodyModel
from ..io.config import NetworkConfig
from .container import ContainerError, read_container, write_container

STAGES = ("lbs", "occupancy")


class StageError(RuntimeError):
    pass


def save_body_model(path, body: BodyModel, metadata: dict | None = None,
                    overwrite: bool = False):
    meta = {"kind": "body_model", **(metadata or {})}
    return write_container(path, body.to_arrays(), meta, overwrite=overwrite)


def load_body_model(path) -> BodyModel:
    arrays, meta = read_container(path)
    if meta.get("kind") != "body_model":
        raise ContainerError(f"{path} is not a body-model file (kind={meta.get('kind')!r})")
    return BodyModel.from_arrays(arrays)


def save_checkpoint(path, model, stage: str, extra: dict | None = None,
                    rng: np.random.Generator | None = None, overwrite: bool = False):
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    arrays = {f"param/{k}": v.data for k, v in model.store.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in model.store.buffers.items()})
    arrays.update({f"body/{k}": v for k, v in model.body.to_arrays().items()})
    meta = {"kind": "checkpoint", "stage": stage, "hyperparameters": model.hyperparameters(),
            **(extra or {})}
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    return write_container(path, arrays, meta, overwrite=overwrite)


def load_checkpoint(path, require_stage: str | None = None):
    """Rebuild the model from a checkpoint; returns (model, metadata).

    ``require_stage`` names the earliest stage the checkpoint must have
    completed; anything earlier raises :class:`StageError`.
    """
    from ..occupancy import OccupancyModel

    arrays, meta = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ContainerError(f"{path} is not a checkpoint (kind={meta.get('kind')!r})")
    stage = meta.get("stage")
    if stage not in STAGES:
        raise ContainerError(f"{path}: unknown stage tag {stage!r}")
    if require_stage is not None and STAGES.index(stage) < STAGES.index(require_stage):
        raise StageError(f"{path} holds a '{stage}' checkpoint; this command requires the "
                         f"'{require_stage}' stage to be trained first")
    hp = meta["hyperparameters"]
    body = BodyModel.from_arrays({k[5:]: v for k, v in arrays.items() if k.startswith("body/")})
    net = NetworkConfig(**hp["network"])
    model = OccupancyModel(body, net, seed=hp["seed"], dtype=np.dtype(hp["dtype"]))
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    buffers = {k[7:]: v for k, v in arrays.items() if k.startswith("buffer/")}
    extra = set(params) - set(model.store.params)
    if extra:
        raise ContainerError(f"{path}: unexpected parameters {sorted(extra)[:3]}")
    try:
        model.store.load_arrays(params, buffers)
    except (KeyError, ValueError) as exc:
        raise ContainerError(f"{path}: {exc}") from exc
    return model, meta
