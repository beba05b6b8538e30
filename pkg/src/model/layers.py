"""
Parameterized building blocks.

Layers declare their parameters in a ParamStore when constructed (or bind
to existing ones when the store was loaded from disk) and hold only names,
so one store serves any number of forward passes.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.params import ParamStore
from src.autodiff.tensor import Tensor
from src.system.errors import ShapeMismatchError
from src.utils.seeding import substream


@dataclass(frozen=True)
class ForwardMode:
    """Training flag and batch-norm momentum of one forward pass."""
    training: bool = True
    bn_momentum: float = 0.1


INFERENCE = ForwardMode(training=False)


def glorot_uniform(seed: int, name: str, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return substream(seed, 'init', name).uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """y = x W + b on the last axis; leading axes are flattened."""

    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int, seed: int, bias: bool = True):
        self.store = store
        self.name = name
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.w_name = f"{name}.w"
        self.b_name = f"{name}.b" if bias else None
        store.get_or_declare(self.w_name, lambda: glorot_uniform(seed, self.w_name, fan_in, fan_out))
        if bias:
            store.get_or_declare(self.b_name, lambda: np.zeros(fan_out))
        if store[self.w_name].shape != (fan_in, fan_out):
            raise ShapeMismatchError(f"'{self.w_name}' has shape {store[self.w_name].shape}, expected {(fan_in, fan_out)}")

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = ops.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        out = ops.matmul(flat, self.store[self.w_name])
        if self.b_name:
            out = ops.add(out, self.store[self.b_name])
        return ops.reshape(out, lead + (self.fan_out,)) if x.ndim != 2 else out


class BatchNorm:
    """Per-channel batch norm with running statistics kept as store buffers."""

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.store = store
        self.name = name
        self.gamma = f"{name}.gamma"
        self.beta = f"{name}.beta"
        store.get_or_declare(self.gamma, lambda: np.ones(channels))
        store.get_or_declare(self.beta, lambda: np.zeros(channels))
        self.running_mean = store.buffer(f"{name}.running_mean", lambda: np.zeros(channels))
        self.running_var = store.buffer(f"{name}.running_var", lambda: np.ones(channels))

    def __call__(self, x: Tensor, mode: ForwardMode) -> Tensor:
        lead = x.shape[:-1]
        flat = ops.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        out = ops.batch_norm(
            flat, self.store[self.gamma], self.store[self.beta],
            self.running_mean, self.running_var,
            training=mode.training, momentum=mode.bn_momentum,
        )
        return ops.reshape(out, lead + (x.shape[-1],)) if x.ndim != 2 else out


class SharedMLP:
    """
    Point-wise MLP: Linear, optional BatchNorm and ReLU per layer.

    ``final_activation=False`` leaves the last layer linear (no norm, no ReLU).
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        widths: Sequence[int],
        seed: int,
        batch_norm: bool = True,
        final_activation: bool = True
    ):
        self.layers: List[Linear] = []
        self.norms: List[Optional[BatchNorm]] = []
        self.final_activation = final_activation
        last = len(widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.layers.append(Linear(store, f"{name}.layer{i}", fan_in, fan_out, seed))
            activated = final_activation or i < last
            self.norms.append(BatchNorm(store, f"{name}.bn{i}", fan_out) if batch_norm and activated else None)

    def __call__(self, x: Tensor, mode: ForwardMode) -> Tensor:
        last = len(self.layers) - 1
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms)):
            x = layer(x)
            if i == last and not self.final_activation:
                break
            if norm is not None:
                x = norm(x, mode)
            x = ops.relu(x)
        return x
