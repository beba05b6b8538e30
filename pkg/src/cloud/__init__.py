"""Point cloud data model, file formats and synthetic shapes."""

from .point_cloud import PointCloud, ShapeKind, ShapeSpec
from .formats import load_cloud, save_cloud, infer_format, FORMATS
from .shapes import gen_shape, make_shape_dataset, PART_COUNTS
from .preprocess import normalize_unit_sphere, estimate_normals_pca, resample, with_estimated_normals

__all__ = [
    'PointCloud', 'ShapeKind', 'ShapeSpec',
    'load_cloud', 'save_cloud', 'infer_format', 'FORMATS',
    'gen_shape', 'make_shape_dataset', 'PART_COUNTS',
    'normalize_unit_sphere', 'estimate_normals_pca', 'resample', 'with_estimated_normals',
]
