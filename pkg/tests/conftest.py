"""Shared fixtures for the CP-Net test suite."""

import numpy as np
import pytest

from src.cloud.point_cloud import PointCloud, ShapeSpec
from src.cloud.shapes import gen_shape


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run desk-scale experiments')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale experiment, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sphere():
    return gen_shape(ShapeSpec(kind='sphere', n_points=64, seed=3))


@pytest.fixture
def barbell():
    return gen_shape(ShapeSpec(kind='barbell', n_points=64, seed=5))


@pytest.fixture
def plane_spike():
    """63 grid points in z = 0 and one spike above the middle (index 63)."""
    xs, ys = np.meshgrid(np.linspace(0.0, 1.0, 9), np.linspace(0.0, 0.75, 7))
    grid = np.stack([xs.ravel(), ys.ravel(), np.zeros(63)], axis=1)
    spike = np.array([[0.5, 0.375, 2.0]])
    return PointCloud(points=np.vstack([grid, spike]), id='plane-spike')


@pytest.fixture
def tetrahedron():
    points = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ])
    return PointCloud(points=points, id='tetrahedron')
