"""Network configuration and the fixed folding grid."""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Tuple

import numpy as np

from src.system.errors import InvalidSpecError


class TaskVariant(str, Enum):
    CLASSIFICATION = "classification"
    SEGMENTATION = "segmentation"


CLASSIFICATION_CHANNELS = (32, 64, 128)
SEGMENTATION_CHANNELS = (32, 64, 128, 256)


@dataclass(frozen=True)
class CpNetConfig:
    """
    Shape of the CP-Net backbone and heads.

    Attributes:
        task_variant: classification (no transition-up) or segmentation
        points_per_level: Points kept by each RS-Conv level, strictly decreasing
        channels_per_level: Output channels of each RS-Conv level
        k_neighbors: Neighbours grouped around every sampled center
        use_batch_norm: Batch norm inside encoder and decoder MLPs
        fold_grid_side: Side of the folding lattice, side**2 >= N
        head_width: Channels of every per-level point-wise head
        normal_head: Predict normals on the basic branch
        relation_absolute: Keep absolute coordinates in the relation vector
        weight_hidden: Hidden width of the relation weight MLP
        normal_hidden: Hidden width of the normal head
        fold_hidden: Hidden width of both folding MLPs
        idw_k: Neighbours of the inverse-distance interpolation
    """
    task_variant: TaskVariant = TaskVariant.SEGMENTATION
    points_per_level: Tuple[int, ...] = (256, 128, 64, 32)
    channels_per_level: Tuple[int, ...] = SEGMENTATION_CHANNELS
    k_neighbors: int = 16
    use_batch_norm: bool = True
    fold_grid_side: int = 16
    head_width: int = 32
    normal_head: bool = True
    relation_absolute: bool = True
    weight_hidden: int = 16
    normal_hidden: int = 64
    fold_hidden: int = 64
    idw_k: int = 3

    def __post_init__(self):
        object.__setattr__(self, 'task_variant', TaskVariant(self.task_variant))
        object.__setattr__(self, 'points_per_level', tuple(int(p) for p in self.points_per_level))
        object.__setattr__(self, 'channels_per_level', tuple(int(c) for c in self.channels_per_level))
        if len(self.points_per_level) != len(self.channels_per_level) or not self.points_per_level:
            raise InvalidSpecError("points_per_level and channels_per_level need the same nonzero length")
        if any(b >= a for a, b in zip(self.points_per_level, self.points_per_level[1:])):
            raise InvalidSpecError(f"points_per_level must be strictly decreasing: {self.points_per_level}")
        if self.points_per_level[-1] < 1:
            raise InvalidSpecError("every level needs at least one point")
        if self.k_neighbors < 1:
            raise InvalidSpecError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.fold_grid_side ** 2 < self.n_points:
            raise InvalidSpecError(f"fold_grid_side {self.fold_grid_side} too small for N={self.n_points}")

    @property
    def levels(self) -> int:
        return len(self.points_per_level)

    @property
    def n_points(self) -> int:
        return self.points_per_level[0]

    @property
    def feature_width(self) -> int:
        """Channels of the point-wise feature Y (and of G)."""
        if self.task_variant == TaskVariant.SEGMENTATION:
            return self.head_width * self.levels
        return self.channels_per_level[-1]

    @classmethod
    def for_task(cls, task: str, n_points: int, **overrides) -> 'CpNetConfig':
        """
        Desk-scale defaults for a task variant.

        Points halve every level; three levels for classification and four
        for segmentation.
        """
        variant = TaskVariant(task)
        channels = overrides.pop('channels_per_level', None)
        if channels is None:
            channels = CLASSIFICATION_CHANNELS if variant == TaskVariant.CLASSIFICATION else SEGMENTATION_CHANNELS
        levels = len(channels)
        points = overrides.pop('points_per_level', None)
        if points is None:
            points = tuple(max(1, n_points >> level) for level in range(levels))
        side = overrides.pop('fold_grid_side', None) or math.ceil(math.sqrt(n_points))
        return cls(
            task_variant=variant,
            points_per_level=tuple(points),
            channels_per_level=tuple(channels),
            fold_grid_side=side,
            **overrides,
        )

    def with_points(self, n_points: int) -> 'CpNetConfig':
        """Same architecture re-targeted to clouds of n_points."""
        points = tuple(max(1, n_points >> level) for level in range(self.levels))
        return replace(self, points_per_level=points, fold_grid_side=math.ceil(math.sqrt(n_points)))


@dataclass(frozen=True)
class FoldingGrid:
    """N lattice points on the unit square centered at the origin, row-major."""
    side: int
    n: int
    grid: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n: int, side: int = 0) -> 'FoldingGrid':
        side = side or math.ceil(math.sqrt(n))
        if side * side < n:
            raise InvalidSpecError(f"grid side {side} cannot hold {n} points")
        axis = np.linspace(-0.5, 0.5, side)
        yy, xx = np.meshgrid(axis, axis, indexing='ij')
        grid = np.stack([xx.ravel(), yy.ravel()], axis=1)[:n]
        grid.setflags(write=False)
        return cls(side=side, n=n, grid=grid)
