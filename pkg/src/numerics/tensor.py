"""
LDSeg - Tensor and Reverse-Mode Differentiation
Dense numpy-backed tensors that record the operations producing them so
backward() can propagate gradients to parameter leaves.

Precision is float32 by default; precision(np.float64) switches every tensor
created inside the block to float64 (finite-difference checks).
Any operation result or propagated gradient holding NaN or Inf raises
NonFiniteError.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, GraphNotRecordedError, NonFiniteError

_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# ============ Global Modes ============

def get_dtype():
    """Floating dtype used for newly created tensors in this thread."""
    return getattr(_local, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily create tensors with another floating dtype."""
    previous = get_dtype()
    _local.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _local.dtype = previous


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, frozen encoders)."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# ============ Helpers ============

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _require_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        bad = int(values.size - np.count_nonzero(np.isfinite(values)))
        raise NonFiniteError(f"{what} has {bad} NaN/Inf value(s) of {values.size}")


def as_tensor(value) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


# ============ Tensor ============

class Tensor:
    """
    n-dimensional array with an optional recorded history.

    Leaves with requires_grad=True accumulate into `.grad` during backward();
    intermediate nodes only keep their parents and a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=get_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...], backward: BackwardFn) -> "Tensor":
        _require_finite(data, "operation result")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    # ---------- introspection ----------

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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # ---------- arithmetic ----------

    def __add__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._from_op(a.data - b.data, (a, b), backward)

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._from_op(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)

        def backward(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._from_op(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        exponent = float(exponent)

        def backward(g):
            return (g * exponent * np.power(a.data, exponent - 1.0),)

        return Tensor._from_op(np.power(a.data, exponent).astype(a.data.dtype, copy=False), (a,), backward)

    def __matmul__(self, other) -> "Tensor":
        a, b = self, as_tensor(other)
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

        def backward(g):
            return (
                _unbroadcast(g @ _swap_last(b.data), a.shape),
                _unbroadcast(_swap_last(a.data) @ g, b.shape),
            )

        return Tensor._from_op(a.data @ b.data, (a, b), backward)

    # ---------- reductions ----------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._from_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---------- shape ----------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    # ---------- elementwise ----------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))

    def clamp_min(self, floor: float) -> "Tensor":
        a = self
        mask = a.data > floor
        out = np.where(mask, a.data, np.asarray(floor, dtype=a.data.dtype))
        return Tensor._from_op(out, (a,), lambda g: (g * mask,))

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,))

    def silu(self) -> "Tensor":
        a = self
        sig = 1.0 / (1.0 + np.exp(-a.data))
        out = a.data * sig

        def backward(g):
            return (g * sig * (1.0 + a.data * (1.0 - sig)),)

        return Tensor._from_op(out.astype(a.data.dtype, copy=False), (a,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return Tensor._from_op(out, (a,), backward)


# ============ Free Functions ============

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis` (channel concatenation for conditioning/skips)."""
    parts = tuple(as_tensor(t) for t in tensors)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def _topological_order(root: Tensor) -> list:
    """Post-order of the recorded graph (parents before children)."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """
    Accumulate d(loss)/d(leaf) into the `.grad` of every leaf requiring grad.

    Args:
        loss: scalar tensor produced by a recorded computation
        params: optional leaves that must end up with a (possibly zero) gradient buffer

    Raises:
        DimensionError: loss is not a scalar
        GraphNotRecordedError: loss does not depend on any recorded leaf
        NonFiniteError: a propagated gradient contains NaN or Inf
    """
    if loss.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphNotRecordedError("loss is detached: no recorded computation over parameters")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            _require_finite(parent_grad, "gradient")
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    for param in params or ():
        if param.grad is None:
            param.grad = np.zeros_like(param.data)
