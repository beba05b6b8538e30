"""Normalization, resampling and PCA normal estimation."""

import numpy as np
from loguru import logger

from src.cloud.point_cloud import PointCloud
from src.geometry.neighbors import knn
from src.system.errors import BadKError, TooFewPointsError

_DEGENERATE_SCALE = 1e-12
_SIGN_TIE = 1e-12


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """
    Center a cloud at its centroid and scale its farthest point to norm 1.

    Normals and labels pass through unchanged. A cloud whose points all
    coincide maps to the origin.
    """
    centered = cloud.points - cloud.points.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale < _DEGENERATE_SCALE:
        return cloud.with_points(np.zeros_like(centered))
    return cloud.with_points(centered / scale)


def resample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """
    Bring a cloud to exactly ``n`` points.

    Shrinking picks a seeded subset without replacement (original order kept);
    growing keeps every point and appends seeded repeats.
    """
    size = len(cloud)
    if n == size:
        return cloud
    rng = np.random.default_rng(seed)
    if n < size:
        idx = np.sort(rng.choice(size, n, replace=False))
    else:
        idx = np.concatenate([np.arange(size), rng.choice(size, n - size, replace=True)])
    logger.debug(f"Resampled cloud '{cloud.id}' from {size} to {n} points")
    return cloud.subset(idx)


def _orient(normals: np.ndarray, outward: np.ndarray) -> np.ndarray:
    """Flip normals to point away from the centroid; ties toward +z, then +y, +x."""
    dots = np.einsum('ij,ij->i', normals, outward)
    flip = dots < -_SIGN_TIE
    tie = np.abs(dots) <= _SIGN_TIE
    if np.any(tie):
        tied = normals[tie]
        tie_flip = np.zeros(len(tied), dtype=bool)
        decided = np.zeros(len(tied), dtype=bool)
        for axis in (2, 1, 0):
            component = tied[:, axis]
            undecided = ~decided & (np.abs(component) > _SIGN_TIE)
            tie_flip[undecided] = component[undecided] < 0
            decided |= undecided
        flip[np.flatnonzero(tie)] = tie_flip
    normals[flip] *= -1.0
    return normals


def estimate_normals_pca(cloud: PointCloud, k: int = 16) -> np.ndarray:
    """
    Estimate unit normals from local covariance.

    The normal of a point is the least-variance eigenvector of the covariance
    of the point together with its k nearest neighbours.

    Args:
        cloud: Input cloud
        k: Neighbour count, 3 <= k < N

    Returns:
        (N, 3) unit normals pointing away from the centroid
    """
    n = len(cloud)
    if k >= n:
        raise TooFewPointsError(f"need more than k={k} points for PCA normals, got {n}")
    if k < 3:
        raise BadKError(f"PCA normals need k >= 3, got {k}")

    points = cloud.points
    neighbors = knn(points, k).indices
    patches = points[np.concatenate([np.arange(n)[:, None], neighbors], axis=1)]
    centered = patches - patches.mean(axis=1, keepdims=True)
    covariance = np.einsum('nki,nkj->nij', centered, centered) / (k + 1)
    _, vectors = np.linalg.eigh(covariance)
    normals = vectors[:, :, 0].copy()
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return _orient(normals, points - points.mean(axis=0))


def with_estimated_normals(cloud: PointCloud, k: int = 16) -> PointCloud:
    """Return the cloud with PCA normals attached if it has none."""
    if cloud.has_normals:
        return cloud
    logger.warning(f"Cloud '{cloud.id}' has no normals; estimating them with PCA (k={k})")
    return PointCloud(
        points=cloud.points,
        normals=estimate_normals_pca(cloud, k),
        part_labels=cloud.part_labels,
        id=cloud.id,
    )
