"""Point cloud data model."""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from src.system.errors import EmptyCloudError, InvalidSpecError, ShapeMismatchError

UNIT_TOLERANCE = 1e-6


def _frozen(array: Optional[np.ndarray], dtype) -> Optional[np.ndarray]:
    if array is None:
        return None
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PointCloud:
    """
    Coordinates with optional unit normals and per-point part labels.

    Arrays are copied and made read-only on construction.
    """
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    part_labels: Optional[np.ndarray] = None
    id: str = ""

    def __post_init__(self):
        points = _frozen(self.points, np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeMismatchError(f"points must be (N, 3), got {points.shape}")
        if len(points) == 0:
            raise EmptyCloudError(f"cloud '{self.id}' has no points")
        if not np.all(np.isfinite(points)):
            raise InvalidSpecError(f"cloud '{self.id}' has non-finite coordinates")
        object.__setattr__(self, 'points', points)

        if self.normals is not None:
            normals = _frozen(self.normals, np.float64)
            if normals.shape != points.shape:
                raise ShapeMismatchError(f"normals shape {normals.shape} != points shape {points.shape}")
            lengths = np.linalg.norm(normals, axis=1)
            if np.any(np.abs(lengths - 1.0) > UNIT_TOLERANCE):
                raise InvalidSpecError(f"cloud '{self.id}' has non-unit normals")
            object.__setattr__(self, 'normals', normals)

        if self.part_labels is not None:
            labels = _frozen(self.part_labels, np.int64)
            if labels.shape != (len(points),):
                raise ShapeMismatchError(f"part_labels length {labels.shape} != N={len(points)}")
            object.__setattr__(self, 'part_labels', labels)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_points(self, points: np.ndarray) -> 'PointCloud':
        return replace(self, points=points)

    def subset(self, indices: np.ndarray, id: Optional[str] = None) -> 'PointCloud':
        """Rows ``indices`` of the cloud, normals and labels included."""
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            points=self.points[indices],
            normals=None if self.normals is None else self.normals[indices],
            part_labels=None if self.part_labels is None else self.part_labels[indices],
            id=self.id if id is None else id,
        )


class ShapeKind(str, Enum):
    SPHERE = "sphere"
    CUBE = "cube"
    TORUS = "torus"
    CYLINDER = "cylinder"
    BARBELL = "barbell"


@dataclass(frozen=True)
class ShapeSpec:
    """Recipe for one synthetic shape."""
    kind: ShapeKind
    n_points: int
    seed: int = 0
    noise_std: float = 0.0
    id: str = field(default="", compare=False)

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', ShapeKind(self.kind))
        except ValueError as e:
            raise InvalidSpecError(f"unknown shape kind '{self.kind}'") from e
        if self.n_points < 8:
            raise InvalidSpecError(f"n_points must be >= 8, got {self.n_points}")
        if self.noise_std < 0:
            raise InvalidSpecError(f"noise_std must be >= 0, got {self.noise_std}")
