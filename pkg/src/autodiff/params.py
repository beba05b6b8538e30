"""
Named parameter storage and its on-disk container.

Container layout (all integers little-endian)::

    8 bytes   magic  b'CPNETPS\\0'
    4 bytes   u32    format version
    8 bytes   u64    header length H
    H bytes   UTF-8  JSON header, sorted keys, compact separators
    ...       f64    payload, arrays in header order, little-endian

The header holds ``entries`` (name, shape, offset, count; offsets counted in
float64 elements from the start of the payload) and a free ``meta`` mapping.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from src.autodiff.tensor import Tensor
from src.system.errors import (
    CloudIOError, MisalignedError, ShapeMismatchError, UsageError, VersionMismatchError
)

MAGIC = b'CPNETPS\0'
FORMAT_VERSION = 1

_PARAM = 'param:'
_BUFFER = 'buffer:'
_ADAM_M = 'adam_m:'
_ADAM_V = 'adam_v:'


@dataclass
class AdamState:
    """First/second moment estimates and step count of one parameter."""
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class ParamStore:
    """
    Parameters shared by every forward pass of a model.

    Parameters are leaf tensors with ``requires_grad``; buffers are plain
    arrays updated outside the gradient path (batch-norm running stats).
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self.adam: Dict[str, AdamState] = {}

    # parameters

    def declare(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise UsageError(f"parameter '{name}' already declared")
        value = np.array(value, dtype=np.float64, copy=True)
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        self.adam[name] = AdamState(m=np.zeros_like(value), v=np.zeros_like(value))
        return tensor

    def get_or_declare(self, name: str, init) -> Tensor:
        """Return an existing parameter or declare it from ``init()``."""
        if name in self._params:
            return self._params[name]
        return self.declare(name, init())

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UsageError(f"unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> List[str]:
        return sorted(self._params)

    def assign(self, name: str, value: np.ndarray) -> None:
        """Overwrite a parameter's values in place; the shape is fixed."""
        tensor = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != tensor.shape:
            raise ShapeMismatchError(f"'{name}': expected shape {tensor.shape}, got {value.shape}")
        tensor.data[...] = value

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    # buffers

    def buffer(self, name: str, init) -> np.ndarray:
        if name not in self._buffers:
            self._buffers[name] = np.array(init(), dtype=np.float64, copy=True)
        return self._buffers[name]

    def buffer_names(self) -> List[str]:
        return sorted(self._buffers)

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    # snapshots

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Copies of all parameter values."""
        return {name: self._params[name].data.copy() for name in self.names()}

    def load_snapshot(self, values: Dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            raise MisalignedError("snapshot names differ from the store")
        for name, value in values.items():
            self.assign(name, value)

    def copy(self) -> 'ParamStore':
        clone = ParamStore()
        for name in self.names():
            clone.declare(name, self._params[name].data)
            state = self.adam[name]
            clone.adam[name] = AdamState(m=state.m.copy(), v=state.v.copy(), t=state.t)
        for name in self.buffer_names():
            clone._buffers[name] = self._buffers[name].copy()
        return clone

    # container

    def _arrays(self) -> List[Tuple[str, np.ndarray]]:
        arrays = []
        for name in self.names():
            arrays.append((_PARAM + name, self._params[name].data))
        for name in self.buffer_names():
            arrays.append((_BUFFER + name, self._buffers[name]))
        for name in self.names():
            arrays.append((_ADAM_M + name, self.adam[name].m))
            arrays.append((_ADAM_V + name, self.adam[name].v))
        return arrays

    def to_bytes(self, meta: Optional[Dict[str, Any]] = None) -> bytes:
        """Serialize parameters, buffers and optimizer state."""
        entries = []
        payload = []
        offset = 0
        for name, array in self._arrays():
            flat = np.ascontiguousarray(array, dtype='<f8').ravel()
            entries.append({'name': name, 'shape': list(array.shape), 'offset': offset, 'count': int(flat.size)})
            payload.append(flat.tobytes())
            offset += flat.size

        header_meta = dict(meta or {})
        header_meta['adam_steps'] = {name: self.adam[name].t for name in self.names()}
        header = json.dumps(
            {'entries': entries, 'meta': header_meta}, sort_keys=True, separators=(',', ':')
        ).encode('utf-8')
        return b''.join([MAGIC, struct.pack('<I', FORMAT_VERSION), struct.pack('<Q', len(header)), header] + payload)

    @classmethod
    def from_bytes(cls, blob: bytes) -> Tuple['ParamStore', Dict[str, Any]]:
        """Inverse of ``to_bytes``; returns the store and its meta mapping."""
        if blob[:8] != MAGIC:
            raise CloudIOError("not a parameter container (bad magic)")
        (version,) = struct.unpack('<I', blob[8:12])
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"container version {version}, expected {FORMAT_VERSION}")
        (header_len,) = struct.unpack('<Q', blob[12:20])
        try:
            header = json.loads(blob[20:20 + header_len].decode('utf-8'))
        except ValueError as e:
            raise CloudIOError(f"corrupt container header: {e}") from e
        payload = np.frombuffer(blob[20 + header_len:], dtype='<f8')

        store = cls()
        moments: Dict[str, Dict[str, np.ndarray]] = {}
        for entry in header['entries']:
            start, count = entry['offset'], entry['count']
            if start + count > payload.size:
                raise CloudIOError(f"container truncated at entry '{entry['name']}'")
            array = payload[start:start + count].astype(np.float64).reshape(entry['shape'])
            kind, _, name = entry['name'].partition(':')
            if kind + ':' == _PARAM:
                store.declare(name, array)
            elif kind + ':' == _BUFFER:
                store._buffers[name] = array.copy()
            else:
                moments.setdefault(name, {})[kind] = array.copy()

        meta = header.get('meta', {})
        steps = meta.pop('adam_steps', {})
        for name, state in moments.items():
            store.adam[name] = AdamState(m=state['adam_m'], v=state['adam_v'], t=int(steps.get(name, 0)))
        return store, meta

    def save(self, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.to_bytes(meta))
        except OSError as e:
            raise CloudIOError(f"cannot write parameters to {path}: {e}") from e
        logger.debug(f"Saved {len(self)} parameters to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> Tuple['ParamStore', Dict[str, Any]]:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise CloudIOError(f"cannot read parameters from {path}: {e}") from e
        return cls.from_bytes(blob)
