"""
Dense tensors and the reverse-mode tape.

Operations record themselves on the innermost active ``Tape`` of the current
thread. Without an active tape they only compute values, which is how
frozen evaluation and finite differences run.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.system.errors import NonFiniteError, NonScalarLossError

VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()
_debug = {'enabled': False}


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/Inf when enabled."""
    _debug['enabled'] = bool(enabled)


def debug_enabled() -> bool:
    return _debug['enabled']


class Tensor:
    """
    Row-major float64 array.

    A tensor carries no tape state; every tape keeps its own node ids, so
    one parameter can take part in several tapes at once.
    """

    __slots__ = ('data', 'requires_grad', 'name')
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> 'Tensor':
        from src.autodiff import ops
        return ops.transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def node_id(self, tape: 'Tape') -> Optional[int]:
        return tape.node_of(self)

    def __repr__(self) -> str:
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        from src.autodiff import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.autodiff import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.autodiff import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.autodiff import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.autodiff import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from src.autodiff import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from src.autodiff import ops
        return ops.take(self, key)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(np.array(value, dtype=np.float64, copy=True))


@dataclass
class Record:
    out_id: int
    input_ids: Tuple[Optional[int], ...]
    vjp: VJP


class Tape:
    """
    Ordered record of differentiable operations.

    Use as a context manager; tapes nest per thread and the innermost one
    records.
    """

    def __init__(self):
        self.records: List[Record] = []
        # id(tensor) -> node id; the watched list keeps those ids from being reused
        self._ids: Dict[int, int] = {}
        self._watched: List[Tensor] = []

    def __enter__(self) -> 'Tape':
        stack = getattr(_local, 'stack', None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.records)

    def node_of(self, tensor: Tensor) -> Optional[int]:
        return self._ids.get(id(tensor))

    def watch(self, tensor: Tensor) -> int:
        """Assign (or return) the tensor's node id on this tape."""
        key = id(tensor)
        nid = self._ids.get(key)
        if nid is None:
            nid = len(self._watched)
            self._ids[key] = nid
            self._watched.append(tensor)
        return nid

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: VJP) -> None:
        input_ids = tuple(self.watch(t) if t.requires_grad else None for t in inputs)
        self.records.append(Record(out_id=self.watch(out), input_ids=input_ids, vjp=vjp))

    def reset(self) -> None:
        self.records.clear()
        self._ids.clear()
        self._watched.clear()


def active_tape() -> Optional[Tape]:
    stack = getattr(_local, 'stack', None)
    return stack[-1] if stack else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], vjp: VJP, op: str) -> Tensor:
    """Wrap an op's output and record it when any input needs gradients."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if _debug['enabled'] and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, vjp)
    return out


class Gradients:
    """Gradients of one backward pass, keyed by node id."""

    def __init__(self, tape: Tape, grads: Dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def of(self, tensor: Tensor) -> np.ndarray:
        nid = tensor.node_id(self._tape)
        if nid is None or nid not in self._grads:
            return np.zeros_like(tensor.data)
        return self._grads[nid]

    def for_store(self, store) -> Dict[str, np.ndarray]:
        """Gradients aligned with a ParamStore; unreachable parameters get zeros."""
        return {name: self.of(store[name]) for name in store.names()}


def backward(tape: Tape, loss: Tensor, store=None):
    """
    Reverse pass from a scalar loss.

    The tape is not modified, so repeated calls return identical results.

    Args:
        tape: Tape the loss was computed on
        loss: Scalar tensor
        store: Optional ParamStore to align the result with

    Returns:
        Dict name -> gradient when ``store`` is given, otherwise Gradients
    """
    if loss.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {}
    loss_id = loss.node_id(tape)
    if loss_id is not None:
        grads[loss_id] = np.ones_like(loss.data)
        for record in reversed(tape.records):
            g = grads.get(record.out_id)
            if g is None:
                continue
            input_grads = record.vjp(g)
            for nid, gi in zip(record.input_ids, input_grads):
                if nid is None or gi is None:
                    continue
                grads[nid] = grads[nid] + gi if nid in grads else gi

    result = Gradients(tape, grads)
    return result.for_store(store) if store is not None else result
