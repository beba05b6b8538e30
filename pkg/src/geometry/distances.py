"""Chamfer distance and inverse-distance feature interpolation."""

from typing import Tuple

import numpy as np

from src.geometry.neighbors import knn_query, pairwise_distances
from src.system.errors import EmptyCloudError, EmptySourceError, BadKError

IDW_EPS = 1e-8
COINCIDENT = 1e-12


def nearest(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """For every src point, the index of and distance to its nearest dst point."""
    d = pairwise_distances(src, dst)
    idx = np.argmin(d, axis=1)
    return idx, d[np.arange(len(src)), idx]


def chamfer(p: np.ndarray, q: np.ndarray) -> float:
    """
    Two-directional, non-squared Chamfer distance.

    Args:
        p: (N, 3) points
        q: (M, 3) points

    Returns:
        sum_p min_q |p - q| + sum_q min_p |q - p|
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise EmptyCloudError("chamfer distance needs two nonempty clouds")
    d = pairwise_distances(p, q)
    return float(d.min(axis=1).sum() + d.min(axis=0).sum())


def idw_weights(
    src_points: np.ndarray,
    query_points: np.ndarray,
    k: int = 3,
    eps: float = IDW_EPS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Neighbour indices and normalized inverse-distance weights.

    A query within 1e-12 of a source takes that source's weight only.

    Returns:
        (indices, weights), both (Q, k); every weight row sums to 1
    """
    if len(src_points) == 0:
        raise EmptySourceError("interpolation needs at least one source point")
    if not 1 <= k <= len(src_points):
        raise BadKError(f"k must satisfy 1 <= k <= sources (k={k}, sources={len(src_points)})")
    idx, dist = knn_query(src_points, query_points, k)
    weights = 1.0 / (dist + eps)
    coincident = dist[:, 0] < COINCIDENT
    weights[coincident] = 0.0
    weights[coincident, 0] = 1.0
    weights /= weights.sum(axis=1, keepdims=True)
    return idx, weights


def interpolate_idw(
    src_points: np.ndarray,
    src_features: np.ndarray,
    query_points: np.ndarray,
    k: int = 3
) -> np.ndarray:
    """
    Inverse-distance weighted k-NN interpolation of features.

    Args:
        src_points: (S, 3) source coordinates
        src_features: (S, C) source features
        query_points: (Q, 3) query coordinates
        k: Neighbours per query

    Returns:
        (Q, C) interpolated features
    """
    src_features = np.asarray(src_features, dtype=np.float64)
    idx, weights = idw_weights(src_points, query_points, k)
    return np.einsum('qk,qkc->qc', weights, src_features[idx])
