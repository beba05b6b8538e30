"""Bias-corrected Adam over a ParamStore."""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.autodiff.params import ParamStore
from src.system.errors import InvalidSpecError, MisalignedError


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidSpecError(f"lr must be > 0, got {self.lr}")
        for beta in (self.beta1, self.beta2):
            if not 0.0 < beta < 1.0:
                raise InvalidSpecError(f"betas must lie in (0, 1), got {beta}")


def adam_step(
    store: ParamStore,
    grads: Dict[str, np.ndarray],
    hyper: AdamHyper,
    lr: Optional[float] = None
) -> None:
    """
    Update every parameter of the store in place.

    Args:
        store: Parameters and their moment estimates
        grads: Gradient per parameter name, same names and shapes as the store
        hyper: Adam hyper-parameters
        lr: Learning rate override for scheduled training
    """
    names = store.names()
    if set(grads) != set(names):
        missing = sorted(set(names) - set(grads))
        extra = sorted(set(grads) - set(names))
        raise MisalignedError(f"gradients misaligned with store (missing={missing}, extra={extra})")

    step_lr = hyper.lr if lr is None else lr
    for name in names:
        param = store[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.shape:
            raise MisalignedError(f"'{name}': gradient shape {g.shape} != parameter shape {param.shape}")
        state = store.adam[name]
        state.t += 1
        state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
        state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * g * g
        m_hat = state.m / (1.0 - hyper.beta1 ** state.t)
        v_hat = state.v / (1.0 - hyper.beta2 ** state.t)
        param.data -= step_lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
