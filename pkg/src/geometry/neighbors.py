"""
Exact nearest-neighbour search and farthest point sampling.

All searches are brute force over ``scipy.spatial.distance.cdist`` so that
tie-breaking is fully determined: equal distances resolve to the lower index.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.system.errors import BadKError, BadMError


@dataclass(frozen=True)
class NeighborIndex:
    """k nearest neighbours of every point, self excluded."""
    k: int
    indices: np.ndarray
    distances: np.ndarray


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between two point sets."""
    return cdist(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def knn_query(
    ref: np.ndarray,
    queries: np.ndarray,
    k: int,
    exclude_self: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Find the k nearest reference points of every query.

    Args:
        ref: (N, 3) reference points
        queries: (Q, 3) query points
        k: Neighbour count
        exclude_self: Treat query i as reference i and never return it

    Returns:
        (indices, distances), both (Q, k), rows ascending by distance
    """
    d = pairwise_distances(queries, ref)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind='stable')[:, :k]
    return order, np.take_along_axis(d, order, axis=1)


def knn(points: np.ndarray, k: int) -> NeighborIndex:
    """
    Exact k nearest neighbours of every point of a cloud.

    Args:
        points: (N, 3) coordinates
        k: Neighbour count, 1 <= k < N

    Returns:
        NeighborIndex with the query itself excluded
    """
    n = len(points)
    if not 1 <= k < n:
        raise BadKError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    idx, dist = knn_query(points, points, k, exclude_self=True)
    return NeighborIndex(k=k, indices=idx, distances=dist)


def _start_index(points: np.ndarray) -> int:
    """Point nearest the centroid; ties by lexicographic coordinates, then index."""
    d = np.linalg.norm(points - points.mean(axis=0), axis=1)
    best = d.min()
    candidates = np.flatnonzero(d <= best + 1e-12 * max(1.0, best))
    order = np.lexsort((candidates, points[candidates, 2], points[candidates, 1], points[candidates, 0]))
    return int(candidates[order[0]])


def fps(points: np.ndarray, m: int) -> np.ndarray:
    """
    Farthest point sampling anchored at the centroid-nearest point.

    Args:
        points: (N, 3) coordinates
        m: Number of samples, 1 <= m <= N

    Returns:
        (m,) indices in selection order
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= m <= n:
        raise BadMError(f"m must satisfy 1 <= m <= N (m={m}, N={n})")

    selected = np.empty(m, dtype=np.int64)
    selected[0] = _start_index(points)
    min_dist = np.linalg.norm(points - points[selected[0]], axis=1)
    min_dist[selected[0]] = -1.0

    for i in range(1, m):
        # argmax returns the first maximum, so ties go to the lower index
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
        min_dist[selected[:i + 1]] = -1.0

    return selected
