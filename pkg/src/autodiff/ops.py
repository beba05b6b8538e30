"""
Differentiable primitives.

Each op computes its forward value with numpy and hands ``make_result`` a
closure that maps the output cotangent to one cotangent per input.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.tensor import Tensor, as_tensor, make_result
from src.system.errors import ShapeMismatchError

Axis = Optional[Union[int, Tuple[int, ...]]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'sub')
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'sub')


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')
    return make_result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), 'mul')


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data * factor, (a,), lambda g: (g * factor,), 'scale')


def neg(a) -> Tensor:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return make_result(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g), 'matmul')


# nonlinearities

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), 'relu')


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out ** 2),), 'tanh')


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), 'exp')


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


# structure

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"concat: {e}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_result(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), 'concat')


def take(a, key) -> Tensor:
    """Indexing (basic slices or integer arrays); repeated indices accumulate."""
    a = as_tensor(a)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return make_result(a.data[key], (a,), vjp, 'take')


def gather_rows(a, indices) -> Tensor:
    """Rows ``indices`` of a, any index shape; output shape indices.shape + a.shape[1:]."""
    return take(a, np.asarray(indices, dtype=np.int64))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError(f"reshape: {e}") from e
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_result(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), 'transpose')


def broadcast_to(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ShapeMismatchError(f"broadcast_to: {e}") from e
    return make_result(out, (a,), lambda g: (_unbroadcast(g, a.shape),), 'broadcast_to')


# reductions

def _expand(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return make_result(
        np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims).copy(),), 'sum')


def mean(a, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_pool(a, axis: int = 0) -> Tuple[Tensor, np.ndarray]:
    """
    Maximum along an axis.

    Returns:
        (values, argmax); the gradient goes to the argmax entry, ties to the
        lowest index
    """
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    idx_keep = np.expand_dims(idx, axis)
    values = np.take_along_axis(a.data, idx_keep, axis=axis).squeeze(axis)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx_keep, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make_result(values, (a,), vjp, 'max_pool'), idx


# normalization

def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at a zero vector is taken as zero."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data ** 2, axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (np.where(n > 0, g * a.data / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return make_result(out, (a,), vjp, 'norm')


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(|x|, eps) along an axis."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data ** 2, axis=axis, keepdims=True))
    small = n <= eps
    denom = np.where(small, eps, n)
    out = a.data / denom

    def vjp(g):
        projected = g - out * np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(small, g / eps, projected / denom),)

    return make_result(out, (a,), vjp, 'l2_normalize')


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5
) -> Tensor:
    """
    Batch normalization over axis 0 of an (N, C) input.

    In training mode batch statistics are used and the running statistics
    are updated in place as running = (1 - momentum) * running +
    momentum * batch. In inference mode the op is a fixed affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatchError(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n = x.shape[0]

    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mu) * inv_std
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased

        def vjp(g):
            dx_hat = g * gamma.data
            dx = inv_std / n * (
                n * dx_hat - dx_hat.sum(axis=0) - x_hat * np.sum(dx_hat * x_hat, axis=0)
            )
            return dx, np.sum(g * x_hat, axis=0), g.sum(axis=0)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        x_hat = (x.data - running_mean) * inv_std

        def vjp(g):
            return g * gamma.data * inv_std, np.sum(g * x_hat, axis=0), g.sum(axis=0)

    return make_result(gamma.data * x_hat + beta.data, (x, gamma, beta), vjp, 'batch_norm')


# softmax family

def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Overflow-safe log(sum(exp(a))) along an axis."""
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - shift)
    total = e.sum(axis=axis, keepdims=True)
    out = shift + np.log(total)
    softmax = e / total

    def vjp(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * softmax,)

    return make_result(out if keepdims else np.squeeze(out, axis=axis), (a,), vjp, 'logsumexp')


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - shift
    log_total = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - log_total
    softmax = np.exp(out)

    def vjp(g):
        return (g - softmax * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), vjp, 'log_softmax')


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis=axis))


def cosine_similarity(a, b, eps: float = 1e-12) -> Tensor:
    """Pairwise cosine similarity between the rows of a (n, d) and b (m, d)."""
    return matmul(l2_normalize(a, axis=1, eps=eps), transpose(l2_normalize(b, axis=1, eps=eps)))
