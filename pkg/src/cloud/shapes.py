"""
Seeded synthetic shapes with analytic normals and part labels.

Every shape is built around the origin and scaled so that its farthest
surface point lies on the unit sphere.
"""

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger

from src.cloud.point_cloud import PointCloud, ShapeKind, ShapeSpec
from src.system.errors import InvalidSpecError
from src.utils.seeding import derive_seed

Sampler = Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray, np.ndarray]]

PART_COUNTS: Dict[ShapeKind, int] = {
    ShapeKind.SPHERE: 2,
    ShapeKind.CUBE: 6,
    ShapeKind.TORUS: 2,
    ShapeKind.CYLINDER: 2,
    ShapeKind.BARBELL: 3,
}

TORUS_R, TORUS_r = 1.0, 0.35
CYL_RADIUS, CYL_HALF_HEIGHT = 0.5, 1.0
BELL_RADIUS, BELL_OFFSET, HANDLE_RADIUS = 0.5, 1.0, 0.2


def _unit_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _split_counts(rng: np.random.Generator, n: int, areas: Sequence[float]) -> np.ndarray:
    p = np.asarray(areas, dtype=np.float64)
    return rng.multinomial(n, p / p.sum())


def _sphere(rng, n):
    normals = _unit_directions(rng, n)
    labels = (normals[:, 2] < 0).astype(np.int64)
    return normals.copy(), normals, labels


def _cube(rng, n):
    faces = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    points = np.empty((n, 3))
    normals = np.zeros((n, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    for a in range(3):
        rows = axis == a
        others = [b for b in range(3) if b != a]
        points[rows, a] = sign[rows]
        points[rows, others[0]] = uv[rows, 0]
        points[rows, others[1]] = uv[rows, 1]
        normals[rows, a] = sign[rows]
    return points / np.sqrt(3.0), normals, faces.astype(np.int64)


def _torus(rng, n):
    phi_parts = [np.empty(0)]
    have = 0
    # rejection sampling of the tube angle, density proportional to R + r cos(phi)
    while have < n:
        phi = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0.0, TORUS_R + TORUS_r, size=2 * n) < TORUS_R + TORUS_r * np.cos(phi)
        phi_parts.append(phi[keep])
        have += int(keep.sum())
    phi = np.concatenate(phi_parts)[:n]
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = TORUS_R + TORUS_r * np.cos(phi)
    points = np.stack([ring * np.cos(theta), ring * np.sin(theta), TORUS_r * np.sin(phi)], axis=1)
    normals = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=1)
    labels = (np.cos(phi) >= 0).astype(np.int64)
    return points / (TORUS_R + TORUS_r), normals, labels


def _disk(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    return r * np.cos(t), r * np.sin(t)


def _tube(rng, n, radius, z_lo, z_hi):
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(z_lo, z_hi, size=n)
    normals = np.stack([np.cos(t), np.sin(t), np.zeros(n)], axis=1)
    points = np.stack([radius * np.cos(t), radius * np.sin(t), z], axis=1)
    return points, normals


def _cylinder(rng, n):
    side_area = 2 * np.pi * CYL_RADIUS * 2 * CYL_HALF_HEIGHT
    cap_area = np.pi * CYL_RADIUS ** 2
    n_side, n_top, n_bottom = _split_counts(rng, n, [side_area, cap_area, cap_area])

    side_p, side_n = _tube(rng, n_side, CYL_RADIUS, -CYL_HALF_HEIGHT, CYL_HALF_HEIGHT)
    caps_p, caps_n = [], []
    for count, z in ((n_top, CYL_HALF_HEIGHT), (n_bottom, -CYL_HALF_HEIGHT)):
        x, y = _disk(rng, count, CYL_RADIUS)
        caps_p.append(np.stack([x, y, np.full(count, z)], axis=1))
        caps_n.append(np.tile([0.0, 0.0, np.sign(z)], (count, 1)))

    points = np.vstack([side_p] + caps_p)
    normals = np.vstack([side_n] + caps_n)
    labels = np.concatenate([np.zeros(n_side, np.int64), np.ones(n_top + n_bottom, np.int64)])
    return points / np.hypot(CYL_RADIUS, CYL_HALF_HEIGHT), normals, labels


def _bell(rng, n, center_z):
    """Sphere surface minus the cap hidden inside the handle."""
    parts, have = [np.empty((0, 3))], 0
    while have < n:
        d = _unit_directions(rng, 2 * n + 8)
        p = BELL_RADIUS * d
        inward = np.sign(-center_z) * p[:, 2] > 0
        hidden = inward & (p[:, 0] ** 2 + p[:, 1] ** 2 < HANDLE_RADIUS ** 2)
        parts.append(d[~hidden])
        have += int((~hidden).sum())
    d = np.vstack(parts)[:n]
    return BELL_RADIUS * d + [0.0, 0.0, center_z], d


def _barbell(rng, n):
    joint = BELL_OFFSET - np.sqrt(BELL_RADIUS ** 2 - HANDLE_RADIUS ** 2)
    sphere_area = 4 * np.pi * BELL_RADIUS ** 2
    handle_area = 2 * np.pi * HANDLE_RADIUS * 2 * joint
    n_top, n_bottom, n_handle = _split_counts(rng, n, [sphere_area, sphere_area, handle_area])

    top_p, top_n = _bell(rng, n_top, BELL_OFFSET)
    bot_p, bot_n = _bell(rng, n_bottom, -BELL_OFFSET)
    han_p, han_n = _tube(rng, n_handle, HANDLE_RADIUS, -joint, joint)

    points = np.vstack([top_p, bot_p, han_p])
    normals = np.vstack([top_n, bot_n, han_n])
    labels = np.concatenate([
        np.zeros(n_top, np.int64), np.ones(n_bottom, np.int64), np.full(n_handle, 2, np.int64)
    ])
    return points / (BELL_OFFSET + BELL_RADIUS), normals, labels


_SAMPLERS: Dict[ShapeKind, Sampler] = {
    ShapeKind.SPHERE: _sphere,
    ShapeKind.CUBE: _cube,
    ShapeKind.TORUS: _torus,
    ShapeKind.CYLINDER: _cylinder,
    ShapeKind.BARBELL: _barbell,
}


def gen_shape(spec: ShapeSpec) -> PointCloud:
    """
    Sample a synthetic shape.

    Args:
        spec: Shape recipe

    Returns:
        PointCloud with analytic normals and part labels, deterministic per seed
    """
    if not isinstance(spec, ShapeSpec):
        raise InvalidSpecError(f"expected ShapeSpec, got {type(spec).__name__}")
    rng = np.random.default_rng(spec.seed)
    points, normals, labels = _SAMPLERS[spec.kind](rng, spec.n_points)

    if spec.noise_std > 0:
        points = points + rng.normal(0.0, spec.noise_std, size=points.shape)
        radius = np.linalg.norm(points, axis=1).max()
        if radius > 1.0:
            points = points / radius

    return PointCloud(
        points=points,
        normals=normals,
        part_labels=labels,
        id=spec.id or f"{spec.kind.value}-{spec.seed}",
    )


def make_shape_dataset(
    kinds: Sequence[str],
    count_per_kind: int,
    n_points: int,
    seed: int,
    noise_std: float = 0.0
) -> Tuple[List[PointCloud], np.ndarray]:
    """
    Build a labelled multi-class synthetic dataset.

    Args:
        kinds: Shape kinds, one class each (in this order)
        count_per_kind: Clouds per class
        n_points: Points per cloud
        seed: Dataset seed; each cloud's seed is derived from it
        noise_std: Gaussian coordinate noise

    Returns:
        (clouds, class labels)
    """
    clouds, labels = [], []
    for label, kind in enumerate(kinds):
        for i in range(count_per_kind):
            spec = ShapeSpec(
                kind=kind,
                n_points=n_points,
                seed=derive_seed(seed, 'data', kind, i),
                noise_std=noise_std,
                id=f"{kind}-{i:04d}",
            )
            clouds.append(gen_shape(spec))
            labels.append(label)
    logger.info(f"Generated {len(clouds)} clouds ({', '.join(kinds)}) with {n_points} points each")
    return clouds, np.asarray(labels, dtype=np.int64)
