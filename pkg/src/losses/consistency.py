"""
Dual-branch consistency losses: global (CG), local (CL) and
local-to-global (CL2G).
"""

from typing import Sequence, Union

import numpy as np
from loguru import logger

from src.autodiff import ops
from src.autodiff.tensor import Tensor, as_tensor
from src.system.errors import InvalidSpecError, ShapeMismatchError, ZeroVectorError

DEFAULT_TAU = 0.1
_ZERO_NORM = 1e-12

GlobalBatch = Union[Tensor, Sequence[Tensor]]


def _stack(globals_: GlobalBatch) -> Tensor:
    if isinstance(globals_, Tensor):
        return globals_ if globals_.ndim == 2 else ops.reshape(globals_, (1, -1))
    rows = [ops.reshape(as_tensor(g), (1, -1)) for g in globals_]
    return rows[0] if len(rows) == 1 else ops.concat(rows, axis=0)


def _check_tau(tau: float) -> None:
    if tau <= 0:
        raise InvalidSpecError(f"tau must be > 0, got {tau}")


def _logits(a: Tensor, b: Tensor, tau: float, normalize: bool) -> Tensor:
    if normalize:
        a, b = ops.l2_normalize(a, axis=1), ops.l2_normalize(b, axis=1)
    return ops.scale(ops.matmul(a, ops.transpose(b)), 1.0 / tau)


def loss_cg(g: Tensor, g_prime: Tensor) -> Tensor:
    """1 - cos(G, G')."""
    g, g_prime = as_tensor(g), as_tensor(g_prime)
    if g.shape != g_prime.shape:
        raise ShapeMismatchError(f"global features differ in shape: {g.shape} vs {g_prime.shape}")
    if np.linalg.norm(g.data) < _ZERO_NORM or np.linalg.norm(g_prime.data) < _ZERO_NORM:
        raise ZeroVectorError("global consistency needs nonzero global features")
    cos = ops.sum(ops.mul(ops.l2_normalize(g, axis=-1), ops.l2_normalize(g_prime, axis=-1)))
    return ops.sub(1.0, cos)


def loss_cl(
    y: Tensor,
    y_prime: Tensor,
    tau: float = DEFAULT_TAU,
    normalize: bool = True,
    symmetric: bool = False
) -> Tensor:
    """
    Point-wise InfoNCE between corresponding rows.

    Row i of ``y`` is the anchor, row i of ``y_prime`` its positive and the
    other rows of ``y_prime`` its negatives. Summed over rows.

    Args:
        y: (N, C) basic-branch features
        y_prime: (N, C) assistant-branch features, rows paired with ``y``
        tau: Temperature
        normalize: l2-normalize rows before the dot products
        symmetric: Average with the assistant-anchored direction
    """
    y, y_prime = as_tensor(y), as_tensor(y_prime)
    if y.shape != y_prime.shape or y.ndim != 2:
        raise ShapeMismatchError(f"local consistency needs equal (N, C) inputs: {y.shape} vs {y_prime.shape}")
    _check_tau(tau)
    diag = (np.arange(y.shape[0]), np.arange(y.shape[0]))
    forward = ops.neg(ops.sum(ops.take(ops.log_softmax(_logits(y, y_prime, tau, normalize), axis=1), diag)))
    if not symmetric:
        return forward
    backward = ops.neg(ops.sum(ops.take(ops.log_softmax(_logits(y_prime, y, tau, normalize), axis=1), diag)))
    return ops.scale(ops.add(forward, backward), 0.5)


def _point_to_global(y: Tensor, globals_: Tensor, own_index: int, tau: float, normalize: bool) -> Tensor:
    log_probs = ops.log_softmax(_logits(y, globals_, tau, normalize), axis=1)
    return ops.neg(ops.sum(ops.take(log_probs, (slice(None), own_index))))


def loss_cl2g(
    y: Tensor,
    y_prime: Tensor,
    g_batch: GlobalBatch,
    g_prime_batch: GlobalBatch,
    own_index: int,
    tau: float = DEFAULT_TAU,
    normalize: bool = True,
    warn: bool = True
) -> Tensor:
    """
    Points of each branch against the batch of global features of the other.

    The positive of every point is its own sample's global feature
    ``own_index``; the other samples' globals are negatives. With a batch
    of one the softmax has a single candidate and the loss is exactly 0.

    Args:
        y: (N, C) basic-branch point features
        y_prime: (N', C) assistant-branch point features
        g_batch: B basic-branch global features
        g_prime_batch: B assistant-branch global features
        own_index: Position of this sample in the batch
        tau: Temperature
        normalize: l2-normalize before the dot products
        warn: Log a warning for a batch of one
    """
    y, y_prime = as_tensor(y), as_tensor(y_prime)
    g_batch, g_prime_batch = _stack(g_batch), _stack(g_prime_batch)
    if g_batch.shape != g_prime_batch.shape:
        raise ShapeMismatchError(f"global batches differ: {g_batch.shape} vs {g_prime_batch.shape}")
    if y.shape[1] != g_batch.shape[1] or y_prime.shape[1] != g_batch.shape[1]:
        raise ShapeMismatchError("point and global features need the same channel count")
    if not 0 <= own_index < g_batch.shape[0]:
        raise ShapeMismatchError(f"own_index {own_index} outside batch of {g_batch.shape[0]}")
    _check_tau(tau)
    if g_batch.shape[0] == 1 and warn:
        logger.warning("Local-to-global consistency with a batch of one contributes 0")

    return ops.add(
        _point_to_global(y, g_prime_batch, own_index, tau, normalize),
        _point_to_global(y_prime, g_batch, own_index, tau, normalize),
    )
