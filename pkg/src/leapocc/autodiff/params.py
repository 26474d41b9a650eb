"""Named learnable tensors and the layer building blocks used by every network."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .core import Value


class ParameterStore:
    """Named parameters (``Value``) plus non-learnable buffers and Adam state.

    Names are dotted paths (``"onet.block0.fc0.weight"``); prefixes are used
    to freeze whole sub-networks.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Value] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: dict[str, int] = {}

    def add(self, name: str, array) -> Value:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = Value(np.array(array, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = value
        return value

    def add_buffer(self, name: str, array) -> np.ndarray:
        if name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        buf = np.array(array, dtype=self.dtype)
        self.buffers[name] = buf
        return buf

    def __getitem__(self, name: str) -> Value:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self, prefix: str = "") -> int:
        return sum(v.size for k, v in self.params.items() if k.startswith(prefix))

    def set_trainable(self, prefix: str, trainable: bool) -> None:
        for name, value in self.params.items():
            if name.startswith(prefix):
                value.requires_grad = trainable

    def trainable(self) -> list[str]:
        return [k for k, v in self.params.items() if v.requires_grad]

    def zero_grad(self) -> None:
        for value in self.params.values():
            value.grad = None

    def load_arrays(self, params: dict, buffers: dict) -> None:
        """Copy arrays into the existing tensors in place (shapes must match)."""
        for name, value in self.params.items():
            if name not in params:
                raise KeyError(f"missing parameter {name!r}")
            src = np.asarray(params[name])
            if src.shape != value.shape:
                raise ValueError(f"shape mismatch for {name!r}: {src.shape} vs {value.shape}")
            np.copyto(value.data, src)
        for name, buf in self.buffers.items():
            if name not in buffers:
                raise KeyError(f"missing buffer {name!r}")
            src = np.asarray(buffers[name])
            if src.shape != buf.shape:
                raise ValueError(f"shape mismatch for buffer {name!r}")
            np.copyto(buf, src)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """``y = x W^T + b`` with fan-in uniform initialisation."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, bias: bool = True, init: str = "uniform"):
        bound = 1.0 / np.sqrt(n_in)
        if init == "zeros":
            w = np.zeros((n_out, n_in))
        else:
            w = _uniform(rng, bound, (n_out, n_in))
        self.weight = store.add(f"{name}.weight", w)
        self.bias = None
        if bias:
            b = np.zeros(n_out) if init == "zeros" else _uniform(rng, bound, n_out)
            self.bias = store.add(f"{name}.bias", b)
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Value:
        return F.linear(x, self.weight, self.bias)


class ConditionalBatchNorm:
    """Batch normalisation whose scale and shift are linear in a condition.

    Training mode normalises by batch statistics (variance floored at
    ``eps``) and updates the running averages; eval mode uses the running
    averages.  The ReLU that follows in the decoders is applied by the caller.
    """

    def __init__(self, store: ParameterStore, name: str, n_features: int, n_cond: int,
                 rng: np.random.Generator, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Linear(store, f"{name}.gamma", n_cond, n_features, rng)
        self.beta = Linear(store, f"{name}.beta", n_cond, n_features, rng)
        # start as plain batch norm: scale 1, shift 0 for any condition
        self.gamma.weight.data[...] = 0.0
        self.gamma.bias.data[...] = 1.0
        self.beta.weight.data[...] = 0.0
        self.beta.bias.data[...] = 0.0
        self.running_mean = store.add_buffer(f"{name}.running_mean", np.zeros(n_features))
        self.running_var = store.add_buffer(f"{name}.running_var", np.ones(n_features))
        self.momentum, self.eps = momentum, eps
        self.n_features = n_features

    def __call__(self, x, cond, training: bool) -> Value:
        if training:
            xhat, mu, var = F.batch_norm(x, self.eps)
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mu
            self.running_var *= m
            self.running_var += (1.0 - m) * var
        else:
            inv_std = 1.0 / np.sqrt(np.maximum(self.running_var, self.eps))
            xhat = (x - self.running_mean) * inv_std
        return xhat * self.gamma(cond) + self.beta(cond)


def cbn_forward(x, cond, cbn: ConditionalBatchNorm, training: bool = True) -> Value:
    return cbn(x, cond, training)
