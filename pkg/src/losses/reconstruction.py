"""Self-reconstruction (Chamfer) and normal-estimation losses."""

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor, as_tensor, constant
from src.geometry.distances import nearest
from src.system.errors import EmptyCloudError, ShapeMismatchError


def chamfer_tensor(p: np.ndarray, q: Tensor) -> Tensor:
    """
    Differentiable non-squared Chamfer distance between fixed points and a
    predicted cloud. Nearest-neighbour assignments are constants.
    """
    p = np.asarray(p, dtype=np.float64)
    q = as_tensor(q)
    if len(p) == 0 or q.shape[0] == 0:
        raise EmptyCloudError("chamfer distance needs two nonempty clouds")
    nn_of_p, _ = nearest(p, q.data)
    nn_of_q, _ = nearest(q.data, p)
    to_pred = ops.norm(ops.sub(ops.gather_rows(q, nn_of_p), constant(p)), axis=1)
    to_true = ops.norm(ops.sub(q, constant(p[nn_of_q])), axis=1)
    return ops.add(ops.sum(to_pred), ops.sum(to_true))


def loss_recon(p: np.ndarray, p_hat: Tensor, p_hat_prime: Tensor) -> Tensor:
    """Both branches reconstruct the original cloud: chamfer(P, P^) + chamfer(P, P^')."""
    return ops.add(chamfer_tensor(p, p_hat), chamfer_tensor(p, p_hat_prime))


def loss_normal(predicted: Tensor, normals: np.ndarray) -> Tensor:
    """1 - mean cosine between predicted and ground-truth normals."""
    predicted = as_tensor(predicted)
    normals = np.asarray(normals, dtype=np.float64)
    if predicted.shape != normals.shape or predicted.ndim != 2 or predicted.shape[1] != 3:
        raise ShapeMismatchError(f"normals must be aligned (N, 3): {predicted.shape} vs {normals.shape}")
    target = normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    cos = ops.sum(ops.mul(ops.l2_normalize(predicted, axis=1), constant(target)), axis=1)
    return ops.sub(1.0, ops.mean(cos))
