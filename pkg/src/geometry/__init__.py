"""Geometric primitives: kNN, FPS, graph-frequency scores, Chamfer, IDW."""

from .neighbors import NeighborIndex, knn, knn_query, fps
from .spectral import FrequencyScores, laplacian_scores, get_scorer
from .distances import chamfer, interpolate_idw, idw_weights

__all__ = [
    'NeighborIndex', 'knn', 'knn_query', 'fps',
    'FrequencyScores', 'laplacian_scores', 'get_scorer',
    'chamfer', 'interpolate_idw', 'idw_weights',
]
