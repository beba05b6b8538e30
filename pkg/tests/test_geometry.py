"""
Tests for kNN, farthest point sampling, graph-frequency scores, Chamfer and IDW.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.geometry.distances import chamfer, interpolate_idw
from src.geometry.neighbors import fps, knn
from src.geometry.spectral import get_scorer, laplacian_scores, random_walk_scores
from src.system.errors import BadKError, BadMError, EmptyCloudError, EmptySourceError, InvalidSpecError


def line(n: int) -> np.ndarray:
    return np.stack([np.arange(float(n)), np.zeros(n), np.zeros(n)], axis=1)


def brute_chamfer(p: np.ndarray, q: np.ndarray) -> float:
    forward = sum(min(np.linalg.norm(a - b) for b in q) for a in p)
    backward = sum(min(np.linalg.norm(b - a) for a in p) for b in q)
    return forward + backward


class TestKnn:
    """Tests for exact nearest neighbours."""

    def test_collinear_ties_go_to_lower_index(self):
        """Equal distances resolve to the lower index."""
        index = knn(line(4), 1)
        assert index.indices[:, 0].tolist() == [1, 0, 1, 2]

    def test_self_excluded_and_sorted(self, rng):
        """Rows never contain the query and distances ascend."""
        points = rng.normal(size=(20, 3))
        index = knn(points, 5)
        assert all(i not in row for i, row in enumerate(index.indices))
        assert np.all(np.diff(index.distances, axis=1) >= 0)

    def test_k_equal_n_minus_one(self, rng):
        """Every row lists all other points."""
        points = rng.normal(size=(6, 3))
        index = knn(points, 5)
        for i, row in enumerate(index.indices):
            assert sorted(row.tolist()) == [j for j in range(6) if j != i]

    @pytest.mark.parametrize('k', [0, 4])
    def test_bad_k(self, k):
        """k must satisfy 1 <= k < N."""
        with pytest.raises(BadKError):
            knn(line(4), k)


class TestFps:
    """Tests for farthest point sampling."""

    def test_collinear_start_and_second_pick(self):
        """Start at the centroid-nearest point (lower x on ties), then the far end."""
        assert fps(line(8), 2).tolist() == [3, 7]

    def test_m_equal_n(self, rng):
        """All indices, distinct, starting near the centroid."""
        points = rng.normal(size=(12, 3))
        picks = fps(points, 12)
        assert sorted(picks.tolist()) == list(range(12))
        centroid_nearest = int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))
        assert picks[0] == centroid_nearest

    def test_square_corners_lexicographic(self):
        """Equidistant corners resolve to the smallest coordinates."""
        corners = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert fps(corners, 1).tolist() == [3]

    @pytest.mark.parametrize('m', [0, 9])
    def test_bad_m(self, m):
        """m must satisfy 1 <= m <= N."""
        with pytest.raises(BadMError):
            fps(line(8), m)


class TestLaplacianScores:
    """Tests for graph-frequency scoring."""

    def test_spike_scores_highest(self, plane_spike):
        """A point sticking out of a plane has the largest residual."""
        scores = laplacian_scores(plane_spike.points, 16).scores
        assert int(np.argmax(scores)) == 63

    def test_tetrahedron_scores_equal(self, tetrahedron):
        """Symmetric configurations score alike."""
        scores = laplacian_scores(tetrahedron.points, 3).scores
        assert np.allclose(scores, scores[0], atol=1e-9)

    def test_rigid_motion_invariance(self, sphere):
        """Rotating and translating the cloud leaves the scores unchanged."""
        rotation = Rotation.from_euler('xyz', [0.3, -1.1, 2.0]).as_matrix()
        moved = sphere.points @ rotation.T + np.array([5.0, -2.0, 1.0])
        a = laplacian_scores(sphere.points, 8).scores
        b = laplacian_scores(moved, 8).scores
        assert np.allclose(a, b, atol=1e-9)

    def test_scores_finite_and_nonnegative(self, barbell):
        """One nonnegative finite score per point."""
        result = laplacian_scores(barbell.points, 16)
        assert result.scores.shape == (64,)
        assert result.k_graph == 16
        assert np.all(np.isfinite(result.scores)) and np.all(result.scores >= 0)

    def test_bad_k(self, tetrahedron):
        """The graph needs 1 <= k < N."""
        with pytest.raises(BadKError):
            laplacian_scores(tetrahedron.points, 4)

    def test_scorer_registry(self):
        """Scorers are looked up by name."""
        assert get_scorer('laplacian') is laplacian_scores
        assert get_scorer('random_walk') is random_walk_scores
        with pytest.raises(InvalidSpecError):
            get_scorer('eigen')


class TestChamfer:
    """Tests for the two-directional Chamfer distance."""

    def test_identity(self, sphere):
        """chamfer(P, P) = 0."""
        assert chamfer(sphere.points, sphere.points) == 0.0

    def test_single_pair(self):
        """Both directions contribute the unit distance."""
        assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == pytest.approx(2.0)

    def test_matches_brute_force(self):
        """Equals the double-loop oracle on seeded pairs."""
        for seed in range(50):
            r = np.random.default_rng(seed)
            p, q = r.normal(size=(int(r.integers(1, 33)), 3)), r.normal(size=(int(r.integers(1, 33)), 3))
            assert chamfer(p, q) == pytest.approx(brute_chamfer(p, q), abs=1e-9)
            assert chamfer(p, q) == pytest.approx(chamfer(q, p), abs=1e-12)

    def test_empty(self):
        """Both clouds must be nonempty."""
        with pytest.raises(EmptyCloudError):
            chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


class TestInterpolation:
    """Tests for inverse-distance weighted interpolation."""

    def test_coincident_query_copies_feature(self):
        """A query on a source returns that source's feature exactly."""
        src = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
        feats = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        out = interpolate_idw(src, feats, src[[1]], k=3)
        assert np.array_equal(out, feats[[1]])

    def test_midpoint_of_equal_features(self):
        """Convex combination of equal values is that value."""
        src = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        feats = np.array([[7.0], [7.0]])
        assert interpolate_idw(src, feats, np.array([[0.5, 0, 0]]), k=2)[0, 0] == pytest.approx(7.0)

    def test_hand_evaluated_weights(self):
        """Weights 4 and 4/3 at x = 0.25."""
        src = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        feats = np.array([[0.0], [1.0]])
        assert interpolate_idw(src, feats, np.array([[0.25, 0, 0]]), k=2)[0, 0] == pytest.approx(0.25, abs=1e-6)

    def test_output_in_source_range(self, rng):
        """Interpolated values stay within the neighbours' range."""
        src, feats = rng.normal(size=(10, 3)), rng.normal(size=(10, 1))
        out = interpolate_idw(src, feats, rng.normal(size=(25, 3)), k=3)
        assert out.min() >= feats.min() - 1e-9 and out.max() <= feats.max() + 1e-9

    def test_empty_source(self):
        """At least one source is needed."""
        with pytest.raises(EmptySourceError):
            interpolate_idw(np.zeros((0, 3)), np.zeros((0, 1)), np.zeros((1, 3)), k=1)
