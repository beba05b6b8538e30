"""
Contour-perturbed augmentation and its ablation manners.

Output rows are always laid out as contour, content, then the dropped
median point (odd N), with deleted rows removed. ``source_idx`` maps every
output row back to the original point it came from.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from loguru import logger
from sklearn.cluster import KMeans

from src.disentangle.decomposition import DisentangledCloud
from src.system.errors import BadCountError, EmptyResultError, InvalidSpecError

N_CLUSTERS = 4


class PerturbationManner(str, Enum):
    """Perturbation manners A-I; H is the contour-perturbed default."""
    A = "A"  # randomly delete a cluster part
    B = "B"  # delete content points
    C = "C"  # delete contour points
    D = "D"  # randomly delete contour or content points
    E = "E"  # jitter all points
    F = "F"  # randomly jitter a cluster part
    G = "G"  # jitter content points
    H = "H"  # jitter contour points
    I = "I"  # randomly jitter contour or content points

    @property
    def deletes(self) -> bool:
        return self in _DELETE

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DELETE = {PerturbationManner.A, PerturbationManner.B, PerturbationManner.C, PerturbationManner.D}
_DESCRIPTIONS = {
    PerturbationManner.A: "Randomly delete a cluster part",
    PerturbationManner.B: "Delete content points",
    PerturbationManner.C: "Delete contour points",
    PerturbationManner.D: "Randomly delete contour or content points",
    PerturbationManner.E: "Jitter all points",
    PerturbationManner.F: "Randomly jitter a cluster part",
    PerturbationManner.G: "Jitter content points",
    PerturbationManner.H: "Jitter contour points",
    PerturbationManner.I: "Randomly jitter contour or content points",
}


@dataclass(frozen=True)
class PerturbedCloud:
    """Perturbed coordinates plus the noise that produced them."""
    points: np.ndarray
    noise: np.ndarray
    manner: PerturbationManner
    std: float
    seed: int
    source_idx: np.ndarray
    jittered: int = 0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_permutation(self) -> bool:
        """True when every original point appears exactly once."""
        n = len(self.source_idx)
        return bool(np.array_equal(np.sort(self.source_idx), np.arange(n)))


def _gaussian(rng: np.random.Generator, count: int, std: float, clip: Optional[float]) -> np.ndarray:
    noise = rng.normal(0.0, std, size=(count, 3)) if std > 0 else np.zeros((count, 3))
    if clip is not None:
        noise = np.clip(noise, -clip, clip)
    return noise


def _cluster_rows(points: np.ndarray, seed: int) -> np.ndarray:
    clusters = min(N_CLUSTERS, len(points))
    model = KMeans(n_clusters=clusters, n_init=10, random_state=seed % (2 ** 32))
    return model.fit_predict(points)


def perturb(
    d: DisentangledCloud,
    manner: str = "H",
    std: float = 0.02,
    seed: int = 0,
    clip: Optional[float] = None
) -> PerturbedCloud:
    """
    Apply one perturbation manner to a disentangled cloud.

    Args:
        d: Disentangled cloud
        manner: Manner letter A-I
        std: Standard deviation of the Gaussian jitter
        seed: Noise / choice seed
        clip: Optional symmetric clip of the jitter, off by default

    Returns:
        PerturbedCloud whose rows follow contour, content, dropped order
    """
    try:
        manner = PerturbationManner(manner)
    except ValueError as e:
        raise InvalidSpecError(f"unknown perturbation manner '{manner}'") from e
    if std < 0:
        raise InvalidSpecError(f"std must be >= 0, got {std}")

    rng = np.random.default_rng(seed)
    order = d.row_order
    base = d.source.points[order]
    m = d.m
    contour_rows = np.arange(m)
    content_rows = np.arange(m, 2 * m)

    if manner in (PerturbationManner.A, PerturbationManner.F):
        labels = _cluster_rows(base, seed)
        chosen = int(rng.integers(labels.max() + 1))
        target = np.flatnonzero(labels == chosen)
    elif manner in (PerturbationManner.B, PerturbationManner.G):
        target = content_rows
    elif manner in (PerturbationManner.C, PerturbationManner.H):
        target = contour_rows
    elif manner in (PerturbationManner.D, PerturbationManner.I):
        target = contour_rows if rng.integers(2) == 0 else content_rows
    else:
        target = np.arange(len(base))

    if manner.deletes:
        keep = np.setdiff1d(np.arange(len(base)), target)
        if manner != PerturbationManner.A:
            keep = keep[keep < 2 * m]
        if len(keep) == 0:
            raise EmptyResultError(f"manner {manner.value} leaves no points in cloud '{d.source.id}'")
        return PerturbedCloud(
            points=base[keep],
            noise=np.zeros((0, 3)),
            manner=manner,
            std=std,
            seed=seed,
            source_idx=order[keep],
        )

    noise = _gaussian(rng, len(target), std, clip)
    points = base.copy()
    points[target] += noise
    return PerturbedCloud(
        points=points,
        noise=noise,
        manner=manner,
        std=std,
        seed=seed,
        source_idx=order,
        jittered=len(target),
    )


def jitter_count_variant(
    d: DisentangledCloud,
    count: int,
    std: float = 0.02,
    seed: int = 0,
    clip: Optional[float] = None
) -> PerturbedCloud:
    """
    Jitter only the ``count`` highest-scoring points.

    count = M reproduces manner H and count = N reproduces manner E for the
    same seed.
    """
    order = d.row_order
    if not 0 <= count <= len(order):
        raise BadCountError(f"count must satisfy 0 <= count <= {len(order)}, got {count}")
    if std < 0:
        raise InvalidSpecError(f"std must be >= 0, got {std}")

    rng = np.random.default_rng(seed)
    noise = _gaussian(rng, count, std, clip)
    points = d.source.points[order].copy()
    points[:count] += noise
    return PerturbedCloud(
        points=points,
        noise=noise,
        manner=PerturbationManner.H,
        std=std,
        seed=seed,
        source_idx=order,
        jittered=count,
    )


def pad_to(perturbed: PerturbedCloud, n: int) -> PerturbedCloud:
    """Cycle through the surviving rows until the cloud has n rows."""
    size = len(perturbed)
    if size == n:
        return perturbed
    rows = np.arange(n) % size
    logger.debug(f"Padding perturbed cloud from {size} to {n} rows")
    return PerturbedCloud(
        points=perturbed.points[rows],
        noise=perturbed.noise,
        manner=perturbed.manner,
        std=perturbed.std,
        seed=perturbed.seed,
        source_idx=perturbed.source_idx[rows],
        jittered=perturbed.jittered,
    )
