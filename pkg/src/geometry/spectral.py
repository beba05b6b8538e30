"""
Graph-frequency scoring of point clouds.

A point's score is the norm of its row of ``L X`` where ``L`` is the
symmetric normalized Laplacian of the kNN graph. Smooth regions, where a
point sits at the average of its neighbours, score near zero; edges and
protrusions score high.
"""

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np
from scipy import sparse

from src.geometry.neighbors import knn
from src.system.errors import BadKError, InvalidSpecError


@dataclass(frozen=True)
class FrequencyScores:
    """Per-point graph-frequency response."""
    scores: np.ndarray
    k_graph: int


Scorer = Callable[[np.ndarray, int], FrequencyScores]


def graph_adjacency(points: np.ndarray, k_graph: int) -> sparse.csr_matrix:
    """
    Symmetrized binary kNN adjacency.

    An edge (i, j) exists if either endpoint lists the other among its
    k nearest neighbours.
    """
    n = len(points)
    neighbors = knn(points, k_graph)
    rows = np.repeat(np.arange(n), k_graph)
    cols = neighbors.indices.ravel()
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj = adj.maximum(adj.T)
    adj.data[:] = 1.0
    return adj


def normalized_laplacian(adj: sparse.csr_matrix) -> sparse.csr_matrix:
    """L = I - D^-1/2 A D^-1/2; isolated vertices get an all-zero row."""
    degree = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degree)
    nonzero = degree > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(degree[nonzero])
    d_half = sparse.diags(inv_sqrt)
    identity = sparse.diags(nonzero.astype(np.float64))
    return (identity - d_half @ adj @ d_half).tocsr()


def random_walk_laplacian(adj: sparse.csr_matrix) -> sparse.csr_matrix:
    """L = I - D^-1 A, whose rows sum to zero."""
    degree = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.zeros_like(degree)
    nonzero = degree > 0
    inv[nonzero] = 1.0 / degree[nonzero]
    identity = sparse.diags(nonzero.astype(np.float64))
    return (identity - sparse.diags(inv) @ adj).tocsr()


def _residual_scores(points: np.ndarray, k_graph: int, operator) -> FrequencyScores:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k_graph < n:
        raise BadKError(f"k_graph must satisfy 1 <= k < N (k={k_graph}, N={n})")
    lap = operator(graph_adjacency(points, k_graph))
    # centered so that the normalized residual does not depend on placement
    x = points - points.mean(axis=0)
    residual = lap @ x
    return FrequencyScores(scores=np.linalg.norm(residual, axis=1), k_graph=k_graph)


def laplacian_scores(points: np.ndarray, k_graph: int = 16) -> FrequencyScores:
    """
    Score every point by the norm of its normalized-Laplacian residual.

    Args:
        points: (N, 3) coordinates
        k_graph: Neighbour count of the graph, 1 <= k_graph < N

    Returns:
        FrequencyScores of length N
    """
    return _residual_scores(points, k_graph, normalized_laplacian)


def random_walk_scores(points: np.ndarray, k_graph: int = 16) -> FrequencyScores:
    """Residual norm under the random-walk Laplacian."""
    return _residual_scores(points, k_graph, random_walk_laplacian)


SCORERS: Dict[str, Scorer] = {
    'laplacian': laplacian_scores,
    'random_walk': random_walk_scores,
}


def get_scorer(name: str) -> Scorer:
    if name not in SCORERS:
        raise InvalidSpecError(f"unknown scorer '{name}', available: {sorted(SCORERS)}")
    return SCORERS[name]
