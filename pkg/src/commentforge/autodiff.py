"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation eagerly computes its numpy result and records parent links
plus a backward closure holding the saved activations it needs; the recorded
creation order is a topological order of the implicit graph, and backward()
replays it reversed. Matrix operands follow a strict 2-D discipline (row
vectors are shape (1, d)) so gradient rules stay unambiguous.

Not thread-safe for concurrent graph construction; a graph and its parameters
belong to one training thread at a time.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class GradientError(RuntimeError):
    pass


_ORDER = itertools.count()
_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Run forward passes without recording backward closures."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order", "_done")

    def __init__(self, data, parents=(), backward=None, requires_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        # One cheap reduction: the sum of an array with any NaN/Inf is non-finite.
        # The precise re-check guards against finite values whose sum overflows.
        if not math.isfinite(self.data.sum()) and not np.all(np.isfinite(self.data)):
            raise NumericalError("tensor holds non-finite values")
        self.grad = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self._order = next(_ORDER)
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d p into every reachable trainable Parameter's .grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise GradientError("backward already called on this loss; build a new graph first")
    loss._done = True

    reachable = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        node = stack.pop()
        reachable.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    reachable.sort(key=lambda t: t._order, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reachable:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_compatible(a_shape, b_shape) -> bool:
    for x, y in zip(reversed(a_shape), reversed(b_shape)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not _broadcast_compatible(a.shape, b.shape):
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}")
    return Tensor(
        a.data + b.data,
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not _broadcast_compatible(a.shape, b.shape):
        raise ShapeError(f"sub: incompatible shapes {a.shape} vs {b.shape}")
    return Tensor(
        a.data - b.data,
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not _broadcast_compatible(a.shape, b.shape):
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}")
    return Tensor(
        a.data * b.data,
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, parents=(a,), backward=lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} vs {b.shape}")
    return Tensor(
        a.data @ b.data,
        parents=(a, b),
        backward=lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")
    return Tensor(a.data.T, parents=(a,), backward=lambda g: (g.T,))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors or axis not in (0, 1):
        raise ShapeError(f"concat needs tensors and axis in (0, 1), got axis={axis}")
    other = 1 - axis
    if tensors[0].data.ndim != 2:
        raise ShapeError(f"concat expects 2-D tensors, got {tensors[0].shape}")
    base = tensors[0].shape[other]
    for t in tensors[1:]:
        if t.data.ndim != 2 or t.shape[other] != base:
            raise ShapeError(
                f"concat axis={axis}: incompatible shapes "
                f"{tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _back(g):
        return tuple(
            g[offsets[i] : offsets[i + 1]] if axis == 0 else g[:, offsets[i] : offsets[i + 1]]
            for i in range(len(tensors))
        )

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward=_back)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis of a 2-D tensor."""
    a = as_tensor(a)
    if axis not in (0, 1) or a.data.ndim != 2 or not 0 <= start <= start + length <= a.shape[axis]:
        raise ShapeError(f"narrow(axis={axis}, start={start}, len={length}) on shape {a.shape}")
    sl = (slice(start, start + length), slice(None)) if axis == 0 else (slice(None), slice(start, start + length))

    def _back(g):
        out = np.zeros_like(a.data)
        out[sl] = g
        return (out,)

    return Tensor(a.data[sl], parents=(a,), backward=_back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # exp of a non-positive argument cannot overflow.
    z = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor(out, parents=(a,), backward=lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return Tensor(out, parents=(a,), backward=lambda g: (g * (a.data > 0.0),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        dot_ = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot_),)

    return Tensor(out, parents=(a,), backward=_back)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericalError("log of non-positive value; clamp first")
    return Tensor(np.log(a.data), parents=(a,), backward=lambda g: (g / a.data,))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, floor)
    return Tensor(out, parents=(a,), backward=lambda g: (g * (a.data >= floor),))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum: incompatible shapes {a.shape} vs {b.shape}")
    a_wins = a.data <= b.data
    return Tensor(
        np.minimum(a.data, b.data),
        parents=(a, b),
        backward=lambda g: (g * a_wins, g * ~a_wins),
    )


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def _back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), backward=_back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]

    def _back(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return Tensor(a.data.mean(axis=axis, keepdims=keepdims), parents=(a,), backward=_back)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of a (V, E) table for an id sequence, shape (len(ids), E)."""
    table = as_tensor(table)
    idx = np.asarray(list(ids), dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids outside [0, {table.shape[0]})")

    def _back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(table.data[idx], parents=(table,), backward=_back)


def scatter_row(values, indices, width: int) -> Tensor:
    """Scatter-add a (1, n) row into a (1, width) row at the given indices."""
    values = as_tensor(values)
    idx = np.asarray(list(indices), dtype=np.int64)
    if values.data.shape != (1, idx.size):
        raise ShapeError(f"scatter_row: values {values.shape} vs {idx.size} indices")
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ShapeError(f"scatter_row: indices outside [0, {width})")
    out = np.zeros((1, width))
    np.add.at(out, (np.zeros_like(idx), idx), values.data[0])
    return Tensor(out, parents=(values,), backward=lambda g: (g[0, idx][None, :],))


def pad_cols(a, n: int) -> Tensor:
    """Append n zero columns to a (1, V) row."""
    a = as_tensor(a)
    if a.data.ndim != 2 or a.shape[0] != 1 or n < 0:
        raise ShapeError(f"pad_cols: expected (1, V) row, got {a.shape}")
    out = np.concatenate([a.data, np.zeros((1, n))], axis=1)
    return Tensor(out, parents=(a,), backward=lambda g: (g[:, : a.shape[1]],))
