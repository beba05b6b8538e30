"""Split a cloud into its high-frequency contour and low-frequency content halves."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger

from src.cloud.point_cloud import PointCloud
from src.geometry.spectral import FrequencyScores, Scorer, laplacian_scores
from src.system.errors import TooFewPointsError


@dataclass(frozen=True)
class DisentangledCloud:
    """
    Index partition of a cloud.

    ``contour_idx`` holds the M highest-scoring points and ``content_idx``
    the M lowest, both in descending score order. For odd N the median-score
    point is left out and recorded in ``dropped``.
    """
    source: PointCloud
    contour_idx: np.ndarray
    content_idx: np.ndarray
    scores: FrequencyScores
    dropped: Optional[int] = None

    @property
    def m(self) -> int:
        return len(self.contour_idx)

    @property
    def row_order(self) -> np.ndarray:
        """Source indices in output order: contour, content, then the dropped point."""
        parts = [self.contour_idx, self.content_idx]
        if self.dropped is not None:
            parts.append(np.array([self.dropped], dtype=np.int64))
        return np.concatenate(parts)

    @property
    def contour(self) -> np.ndarray:
        return self.source.points[self.contour_idx]

    @property
    def content(self) -> np.ndarray:
        return self.source.points[self.content_idx]


def score_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def disentangle(
    cloud: PointCloud,
    k_graph: int = 16,
    scorer: Scorer = laplacian_scores
) -> DisentangledCloud:
    """
    Divide a cloud into contour and content components.

    Args:
        cloud: Input cloud, N >= 4
        k_graph: Neighbour count of the scoring graph
        scorer: Graph-frequency scoring strategy

    Returns:
        DisentangledCloud with M = N // 2 points per component
    """
    n = len(cloud)
    if n < 4:
        raise TooFewPointsError(f"disentangling needs at least 4 points, got {n}")

    scores = scorer(cloud.points, min(k_graph, n - 1))
    order = score_order(scores.scores)
    m = n // 2
    dropped = None
    if n % 2:
        dropped = int(order[m])
        order = np.delete(order, m)
        logger.warning(f"Cloud '{cloud.id}' has odd N={n}; dropping median-score point {dropped}")

    return DisentangledCloud(
        source=cloud,
        contour_idx=order[:m].astype(np.int64),
        content_idx=order[m:].astype(np.int64),
        scores=scores,
        dropped=dropped,
    )
