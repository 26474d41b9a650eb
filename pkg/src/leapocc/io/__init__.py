"""Configuration, mesh files, array containers and checkpoints."""

from .checkpoint import (
    StageError,
    load_body_model,
    load_checkpoint,
    save_body_model,
    save_checkpoint,
)
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .container import ContainerError, read_container, write_container
from .obj import ObjFormatError, read_obj, write_obj

__all__ = [
    "ConfigError", "ContainerError", "ObjFormatError", "RunConfig", "StageError",
    "config_from_dict", "load_body_model", "load_checkpoint", "load_config", "read_container",
    "read_obj", "save_body_model", "save_checkpoint", "write_container", "write_obj",
]
