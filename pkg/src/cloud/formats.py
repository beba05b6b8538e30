"""
Reading and writing ascii xyz, OFF and PLY point clouds.

Coordinates are written with 9 significant digits so that
save -> load -> save reproduces the second file byte for byte.
"""

from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.cloud.point_cloud import PointCloud
from src.system.errors import CloudIOError, EmptyCloudError, ParseError

FORMATS = ('xyz', 'off', 'ply_ascii')
_SUFFIXES = {'.xyz': 'xyz', '.txt': 'xyz', '.off': 'off', '.ply': 'ply_ascii'}
# rows this close to unit length are kept verbatim so re-saving is stable
_RENORMALIZE_ABOVE = 1e-8

PathLike = Union[str, Path]


def infer_format(path: PathLike) -> str:
    fmt = _SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise CloudIOError(f"cannot infer cloud format from '{path}'")
    return fmt


def _fmt(value: float) -> str:
    text = f"{value:.9g}"
    return "0" if text == "-0" else text


def _content_lines(text: str) -> Iterator[Tuple[int, str]]:
    """(line number, stripped line), skipping blanks and '#' comments."""
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if line:
            yield number, line


def _parse_floats(line: str, number: int, expected: Tuple[int, ...]) -> List[float]:
    parts = line.split()
    if len(parts) not in expected:
        raise ParseError(f"expected {' or '.join(map(str, expected))} columns, got {len(parts)}", number)
    try:
        values = [float(p) for p in parts]
    except ValueError as e:
        raise ParseError(f"non-numeric value: {e}", number) from e
    if not all(np.isfinite(values)):
        raise ParseError("non-finite value", number)
    return values


def _unit_rows(normals: np.ndarray, first_line: int) -> np.ndarray:
    lengths = np.linalg.norm(normals, axis=1)
    zero = np.flatnonzero(lengths < 1e-12)
    if len(zero):
        raise ParseError("zero-length normal", first_line + int(zero[0]))
    off = np.abs(lengths - 1.0) > _RENORMALIZE_ABOVE
    normals[off] /= lengths[off, None]
    return normals


def _build(points, normals, labels, path: Path) -> PointCloud:
    if len(points) == 0:
        raise EmptyCloudError(f"no points in {path}")
    return PointCloud(
        points=np.asarray(points, dtype=np.float64),
        normals=None if normals is None else np.asarray(normals, dtype=np.float64),
        part_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        id=path.stem,
    )


def _read_xyz(text: str, path: Path) -> PointCloud:
    rows = []
    first = None
    columns = None
    for number, line in _content_lines(text):
        values = _parse_floats(line, number, (3, 6) if columns is None else (columns,))
        columns = len(values)
        first = first or number
        rows.append(values)
    if not rows:
        raise EmptyCloudError(f"no points in {path}")
    data = np.asarray(rows, dtype=np.float64)
    normals = _unit_rows(data[:, 3:6].copy(), first) if columns == 6 else None
    return _build(data[:, :3], normals, None, path)


def _read_off(text: str, path: Path) -> PointCloud:
    lines = list(_content_lines(text))
    if not lines:
        raise ParseError("missing OFF header", 1)
    number, header = lines[0]
    tokens = header.split()
    if tokens[0] not in ('OFF', 'NOFF'):
        raise ParseError(f"expected 'OFF' header, got '{tokens[0]}'", number)
    with_normals = tokens[0] == 'NOFF'
    rest = lines[1:]
    if len(tokens) > 1:
        counts_line, counts = number, tokens[1:]
    else:
        if not rest:
            raise ParseError("missing vertex/face counts", number + 1)
        counts_line, counts_text = rest[0]
        counts = counts_text.split()
        rest = rest[1:]
    try:
        n_vertices = int(counts[0])
    except (ValueError, IndexError) as e:
        raise ParseError("bad vertex count", counts_line) from e
    if n_vertices == 0:
        raise EmptyCloudError(f"no points in {path}")
    if len(rest) < n_vertices:
        raise ParseError(f"expected {n_vertices} vertices, found {len(rest)}", rest[-1][0] if rest else counts_line)

    width = 6 if with_normals else 3
    data = np.asarray([_parse_floats(line, no, (width,)) for no, line in rest[:n_vertices]])
    normals = _unit_rows(data[:, 3:6].copy(), rest[0][0]) if with_normals else None
    return _build(data[:, :3], normals, None, path)


def _read_ply(text: str, path: Path) -> PointCloud:
    lines = text.splitlines()
    if not lines or lines[0].strip() != 'ply':
        raise ParseError("expected 'ply' magic", 1)

    elements: List[Tuple[str, int, List[str]]] = []
    body_start = None
    for number, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] in ('comment', 'obj_info'):
            continue
        if tokens[0] == 'format':
            if len(tokens) < 2 or tokens[1] != 'ascii':
                raise ParseError(f"unsupported PLY format '{' '.join(tokens[1:])}'", number)
        elif tokens[0] == 'element':
            if len(tokens) != 3:
                raise ParseError("malformed element line", number)
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == 'property':
            if not elements:
                raise ParseError("property before element", number)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == 'end_header':
            body_start = number
            break
        else:
            raise ParseError(f"unexpected header line '{raw.strip()}'", number)
    if body_start is None:
        raise ParseError("missing end_header", len(lines))

    body = lines[body_start:]
    cursor = 0
    vertex_rows = None
    vertex_props: List[str] = []
    vertex_first = body_start + 1
    for name, count, props in elements:
        chunk = body[cursor:cursor + count]
        if len(chunk) < count:
            raise ParseError(f"element '{name}' expects {count} rows", body_start + len(body))
        if name == 'vertex':
            vertex_props = props
            vertex_first = body_start + cursor + 1
            vertex_rows = [
                _parse_floats(line, vertex_first + i, (len(props),)) for i, line in enumerate(chunk)
            ]
        cursor += count

    if not vertex_rows:
        raise EmptyCloudError(f"no points in {path}")
    for axis in ('x', 'y', 'z'):
        if axis not in vertex_props:
            raise ParseError(f"vertex element lacks '{axis}'", body_start)
    data = np.asarray(vertex_rows, dtype=np.float64)
    col = {p: i for i, p in enumerate(vertex_props)}
    points = data[:, [col['x'], col['y'], col['z']]]
    normals = None
    if all(p in col for p in ('nx', 'ny', 'nz')):
        normals = _unit_rows(data[:, [col['nx'], col['ny'], col['nz']]].copy(), vertex_first)
    labels = data[:, col['label']].astype(np.int64) if 'label' in col else None
    return _build(points, normals, labels, path)


_READERS = {'xyz': _read_xyz, 'off': _read_off, 'ply_ascii': _read_ply}


def load_cloud(path: PathLike, fmt: Optional[str] = None) -> PointCloud:
    """
    Load a point cloud file.

    Args:
        path: File path
        fmt: One of 'xyz', 'off', 'ply_ascii'; inferred from the suffix if None

    Returns:
        PointCloud with normals iff the file carries them
    """
    path = Path(path)
    fmt = fmt or infer_format(path)
    if fmt not in _READERS:
        raise CloudIOError(f"unknown format '{fmt}', expected one of {FORMATS}")
    if not path.exists():
        raise CloudIOError(f"file not found: {path}")
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise CloudIOError(f"cannot read {path}: {e}") from e
    cloud = _READERS[fmt](text, path)
    logger.debug(f"Loaded {len(cloud)} points from {path} ({fmt})")
    return cloud


def _rows(cloud: PointCloud) -> List[List[str]]:
    columns = [cloud.points]
    if cloud.normals is not None:
        columns.append(cloud.normals)
    data = np.hstack(columns)
    return [[_fmt(v) for v in row] for row in data]


def format_cloud(cloud: PointCloud, fmt: str) -> str:
    """Serialize a cloud to text in the given format."""
    rows = _rows(cloud)
    if fmt == 'xyz':
        lines = [' '.join(r) for r in rows]
    elif fmt == 'off':
        header = 'NOFF' if cloud.normals is not None else 'OFF'
        lines = [header, f"{len(cloud)} 0 0"] + [' '.join(r) for r in rows]
    elif fmt == 'ply_ascii':
        lines = ['ply', 'format ascii 1.0', f"element vertex {len(cloud)}",
                 'property double x', 'property double y', 'property double z']
        if cloud.normals is not None:
            lines += ['property double nx', 'property double ny', 'property double nz']
        if cloud.part_labels is not None:
            lines.append('property int label')
        lines.append('end_header')
        labels = cloud.part_labels
        for i, r in enumerate(rows):
            if labels is not None:
                r = r + [str(int(labels[i]))]
            lines.append(' '.join(r))
    else:
        raise CloudIOError(f"unknown format '{fmt}', expected one of {FORMATS}")
    return '\n'.join(lines) + '\n'


def save_cloud(cloud: PointCloud, path: PathLike, fmt: Optional[str] = None) -> None:
    """
    Write a point cloud file.

    Args:
        cloud: Cloud to write
        path: Destination path; parent directories are created
        fmt: One of 'xyz', 'off', 'ply_ascii'; inferred from the suffix if None
    """
    path = Path(path)
    fmt = fmt or infer_format(path)
    text = format_cloud(cloud, fmt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
    except OSError as e:
        raise CloudIOError(f"cannot write {path}: {e}") from e
    logger.debug(f"Saved {len(cloud)} points to {path} ({fmt})")
