from . import functional as F
from .adam import Adam, adam_step
from .core import Tape, Value, active_tape, as_value, backward
from .params import ConditionalBatchNorm, Linear, ParameterStore, cbn_forward

__all__ = [
    "Adam",
    "ConditionalBatchNorm",
    "F",
    "Linear",
    "ParameterStore",
    "Tape",
    "Value",
    "active_tape",
    "adam_step",
    "as_value",
    "backward",
    "cbn_forward",
]
