"""
Tests for the point cloud model, file formats, synthetic shapes and preprocessing.
"""

import numpy as np
import pytest

from src.cloud.formats import format_cloud, load_cloud, save_cloud
from src.cloud.point_cloud import PointCloud, ShapeKind, ShapeSpec
from src.cloud.preprocess import estimate_normals_pca, normalize_unit_sphere, resample, with_estimated_normals
from src.cloud.shapes import PART_COUNTS, gen_shape, make_shape_dataset
from src.system.errors import (
    CloudIOError, EmptyCloudError, InvalidSpecError, ParseError, ShapeMismatchError, TooFewPointsError
)

CUBE_CORNERS = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])


class TestPointCloud:
    """Tests for PointCloud invariants."""

    def test_rejects_empty(self):
        """A cloud needs at least one point."""
        with pytest.raises(EmptyCloudError):
            PointCloud(points=np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        """Coordinates must be finite."""
        with pytest.raises(InvalidSpecError):
            PointCloud(points=np.array([[0.0, np.nan, 0.0]]))

    def test_rejects_non_unit_normals(self):
        """Normals must have unit length."""
        with pytest.raises(InvalidSpecError):
            PointCloud(points=np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 2.0]]))

    def test_label_length_must_match(self):
        """One part label per point."""
        with pytest.raises(ShapeMismatchError):
            PointCloud(points=np.zeros((3, 3)), part_labels=np.array([0, 1]))

    def test_arrays_are_read_only(self):
        """Constructed arrays cannot be mutated."""
        cloud = PointCloud(points=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0

    def test_subset_keeps_normals_and_labels(self, sphere):
        """Subsets carry every per-point attribute."""
        sub = sphere.subset(np.array([3, 1]))
        assert np.array_equal(sub.points, sphere.points[[3, 1]])
        assert np.array_equal(sub.normals, sphere.normals[[3, 1]])
        assert np.array_equal(sub.part_labels, sphere.part_labels[[3, 1]])


class TestFormats:
    """Tests for xyz, OFF and PLY reading and writing."""

    def test_load_three_line_xyz(self, tmp_path):
        """Plain xyz gives a cloud without normals."""
        path = tmp_path / 'tri.xyz'
        path.write_text("0 0 0\n1 0 0\n0 1 0\n")
        cloud = load_cloud(path)
        assert len(cloud) == 3
        assert not cloud.has_normals
        assert cloud.id == 'tri'

    def test_six_column_xyz_renormalizes_normals(self, tmp_path):
        """Normals in the file are scaled to unit length."""
        path = tmp_path / 'n.xyz'
        path.write_text("0 0 0 0 0 2\n1 0 0 3 4 0\n")
        cloud = load_cloud(path)
        assert cloud.has_normals
        assert np.allclose(cloud.normals, [[0, 0, 1], [0.6, 0.8, 0]])

    def test_comments_and_blank_lines_are_skipped(self, tmp_path):
        """'#' comments and blank lines carry no records."""
        path = tmp_path / 'c.xyz'
        path.write_text("# header\n\n0 0 0  # origin\n1 1 1\n")
        assert len(load_cloud(path)) == 2

    def test_off_without_header_is_parse_error(self, tmp_path):
        """A missing OFF token fails at line 1."""
        path = tmp_path / 'bad.off'
        path.write_text("3 0 0\n0 0 0\n1 0 0\n0 1 0\n")
        with pytest.raises(ParseError, match='line 1'):
            load_cloud(path)

    def test_malformed_record_reports_line(self, tmp_path):
        """Non-numeric values name their line."""
        path = tmp_path / 'bad.xyz'
        path.write_text("0 0 0\n1 x 0\n")
        with pytest.raises(ParseError, match='line 2'):
            load_cloud(path)

    def test_missing_file(self, tmp_path):
        """A missing file is an I/O error."""
        with pytest.raises(CloudIOError):
            load_cloud(tmp_path / 'absent.xyz')

    def test_empty_file(self, tmp_path):
        """A file without records is an empty cloud."""
        path = tmp_path / 'empty.xyz'
        path.write_text("# nothing\n")
        with pytest.raises(EmptyCloudError):
            load_cloud(path)

    @pytest.mark.parametrize('suffix', ['.xyz', '.off', '.ply'])
    def test_cube_corners_round_trip(self, tmp_path, suffix):
        """Saved corners load back within 1e-8."""
        path = tmp_path / f"corners{suffix}"
        save_cloud(PointCloud(points=CUBE_CORNERS), path)
        assert np.allclose(load_cloud(path).points, CUBE_CORNERS, atol=1e-8)

    @pytest.mark.parametrize('suffix', ['.xyz', '.off', '.ply'])
    def test_second_save_is_byte_identical(self, tmp_path, sphere, suffix):
        """save -> load -> save reproduces the file."""
        first, second = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
        save_cloud(sphere, first)
        save_cloud(load_cloud(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_xyz_with_normals_has_six_columns(self, sphere):
        """Normals are written next to the coordinates."""
        line = format_cloud(sphere, 'xyz').splitlines()[0]
        assert len(line.split()) == 6

    def test_single_point_file(self, tmp_path):
        """N = 1 writes a valid one-record file."""
        path = tmp_path / 'one.off'
        save_cloud(PointCloud(points=np.array([[0.5, 0.25, 0.0]])), path)
        assert len(load_cloud(path)) == 1

    def test_ply_keeps_part_labels(self, tmp_path, barbell):
        """PLY stores the label property."""
        path = tmp_path / 'b.ply'
        save_cloud(barbell, path)
        assert np.array_equal(load_cloud(path).part_labels, barbell.part_labels)

    def test_unknown_suffix(self, tmp_path):
        """Formats are inferred from known suffixes only."""
        with pytest.raises(CloudIOError):
            save_cloud(PointCloud(points=CUBE_CORNERS), tmp_path / 'c.bin')


class TestShapes:
    """Tests for synthetic shape generation."""

    def test_deterministic_per_seed(self):
        """The same spec gives bitwise identical clouds."""
        spec = ShapeSpec(kind='sphere', n_points=256, seed=7)
        a, b = gen_shape(spec), gen_shape(spec)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.normals, b.normals)

    def test_sphere_normals_are_radial(self):
        """Sphere normals point along the position vector."""
        cloud = gen_shape(ShapeSpec(kind='sphere', n_points=256, seed=7))
        directions = cloud.points / np.linalg.norm(cloud.points, axis=1, keepdims=True)
        assert np.allclose(directions, cloud.normals, atol=1e-6)

    def test_barbell_has_three_parts(self):
        """Two bells and the handle."""
        cloud = gen_shape(ShapeSpec(kind='barbell', n_points=512, seed=1))
        assert set(np.unique(cloud.part_labels).tolist()) == {0, 1, 2}

    @pytest.mark.parametrize('kind', ['sphere', 'cube', 'torus', 'cylinder', 'barbell'])
    def test_inside_unit_sphere_with_valid_labels(self, kind):
        """Every shape fits the unit sphere and uses its own part ids."""
        cloud = gen_shape(ShapeSpec(kind=kind, n_points=128, seed=2))
        assert len(cloud) == 128
        assert np.linalg.norm(cloud.points, axis=1).max() <= 1.0 + 1e-9
        assert cloud.part_labels.max() < PART_COUNTS[ShapeKind(kind)]

    def test_too_few_points(self):
        """n_points below 8 is rejected."""
        with pytest.raises(InvalidSpecError):
            ShapeSpec(kind='sphere', n_points=4)

    def test_unknown_kind(self):
        """Only the five shape kinds exist."""
        with pytest.raises(InvalidSpecError):
            ShapeSpec(kind='pyramid', n_points=16)

    def test_dataset_labels_and_ids(self):
        """One class per kind, ids prefixed by the kind."""
        clouds, labels = make_shape_dataset(['sphere', 'cube'], 3, 32, seed=0)
        assert labels.tolist() == [0, 0, 0, 1, 1, 1]
        assert clouds[0].id == 'sphere-0000'
        assert clouds[-1].id == 'cube-0002'
        assert not np.array_equal(clouds[0].points, clouds[1].points)


class TestPreprocess:
    """Tests for normalization, resampling and PCA normals."""

    def test_normalize_two_points(self):
        """Centering and scaling are forced for a pair."""
        cloud = PointCloud(points=np.array([[10.0, 0, 0], [12.0, 0, 0]]))
        assert np.allclose(normalize_unit_sphere(cloud).points, [[-1, 0, 0], [1, 0, 0]])

    def test_normalize_is_idempotent_and_covariant(self, rng):
        """normalize(a P + t) = normalize(P)."""
        cloud = PointCloud(points=rng.normal(size=(50, 3)))
        once = normalize_unit_sphere(cloud)
        moved = PointCloud(points=3.5 * cloud.points + np.array([1.0, -2.0, 0.5]))
        assert np.allclose(normalize_unit_sphere(once).points, once.points, atol=1e-9)
        assert np.allclose(normalize_unit_sphere(moved).points, once.points, atol=1e-9)
        assert np.allclose(once.points.mean(axis=0), 0.0, atol=1e-9)
        assert np.isclose(np.linalg.norm(once.points, axis=1).max(), 1.0, atol=1e-9)

    def test_normalize_coincident_points(self):
        """A single repeated point maps to the origin."""
        cloud = PointCloud(points=np.tile([[3.0, 3.0, 3.0]], (4, 1)))
        assert np.allclose(normalize_unit_sphere(cloud).points, 0.0)

    def test_pca_normals_of_plane(self):
        """A grid in z = 0 has normals along z."""
        xs, ys = np.meshgrid(np.arange(6.0), np.arange(6.0))
        cloud = PointCloud(points=np.stack([xs.ravel(), ys.ravel(), np.zeros(36)], axis=1))
        normals = estimate_normals_pca(cloud, k=8)
        assert np.allclose(np.abs(normals[:, 2]), 1.0, atol=1e-6)

    def test_pca_normals_of_sphere(self):
        """Mean angular error against analytic normals stays below 15 degrees."""
        cloud = gen_shape(ShapeSpec(kind='sphere', n_points=512, seed=11))
        estimated = estimate_normals_pca(PointCloud(points=cloud.points), k=16)
        cosines = np.clip(np.sum(estimated * cloud.normals, axis=1), -1.0, 1.0)
        assert np.degrees(np.arccos(cosines)).mean() < 15.0

    def test_pca_needs_more_points_than_k(self):
        """k >= N is rejected."""
        with pytest.raises(TooFewPointsError):
            estimate_normals_pca(PointCloud(points=CUBE_CORNERS), k=8)

    def test_with_estimated_normals_keeps_existing(self, sphere):
        """Clouds with normals pass through."""
        assert with_estimated_normals(sphere) is sphere

    def test_resample_shrink_and_grow(self, sphere):
        """Shrinking keeps order, growing keeps every original point."""
        small = resample(sphere, 16, seed=0)
        large = resample(sphere, 100, seed=0)
        assert len(small) == 16 and len(large) == 100
        assert np.array_equal(large.points[:64], sphere.points)
        assert np.array_equal(large.part_labels[:64], sphere.part_labels)
        assert np.array_equal(resample(sphere, 16, seed=0).points, small.points)
