"""A small reverse-mode differentiation engine over numpy arrays.

Each operation records its parents and a closure that maps the output
gradient onto the parents.  ``Tensor.backward`` walks the recorded graph in
reverse topological order, writes ``grad`` on every tracked leaf and then
releases the graph, so a second call on the same loss raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class GraphConsumedError(RuntimeError):
    pass


class _GradBuffer:
    """Per-backward accumulator keyed by tensor identity."""

    def __init__(self):
        self.grads: dict[int, np.ndarray] = {}
        self._owned: set[int] = set()

    def add(self, t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        key = id(t)
        cur = self.grads.get(key)
        if cur is None:
            self.grads[key] = g
        elif key in self._owned:
            cur += g
        else:
            self.grads[key] = cur + g
            self._owned.add(key)

    def add_at(self, t: Tensor, index, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        key = id(t)
        cur = self.grads.get(key)
        if cur is None:
            cur = np.zeros_like(t.data)
            self.grads[key] = cur
            self._owned.add(key)
        elif key not in self._owned:
            cur = cur.copy()
            self.grads[key] = cur
            self._owned.add(key)
        np.add.at(cur, index, g) if _is_advanced(index) else _add_basic(cur, index, g)

    def pop(self, t: Tensor):
        return self.grads.pop(id(t), None)


def _is_advanced(index) -> bool:
    if not isinstance(index, tuple):
        index = (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in index)


def _add_basic(buf, index, g):
    buf[index] += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """An array value with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, _GradBuffer], None] | None = None
        self.op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out._consumed = False
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward()")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tracked tensor")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        buf = _GradBuffer()
        buf.add(self, np.ones_like(self.data))
        for node in reversed(order):
            g = buf.pop(node)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                node._backward(g, buf)

        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
        self._consumed = True

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # scalars adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, buf):
        buf.add(a, _unbroadcast(g, a.shape))
        buf.add(b, _unbroadcast(g, b.shape))

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, buf):
        buf.add(a, _unbroadcast(g, a.shape))
        buf.add(b, _unbroadcast(-g, b.shape))

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, buf):
        if a.requires_grad:
            buf.add(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            buf.add(b, _unbroadcast(g * a.data, b.shape))

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g, buf):
        if a.requires_grad:
            buf.add(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            buf.add(b, _unbroadcast(-g * out / b.data, b.shape))

    return Tensor._make(out, (a, b), backward, "div")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data**p

    def backward(g, buf):
        buf.add(a, g * p * a.data ** (p - 1))

    return Tensor._make(out, (a,), backward, "pow")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max against a constant; gradient flows only where a > floor."""
    keep = a.data > floor
    out = np.where(keep, a.data, np.asarray(floor, dtype=a.dtype))

    def backward(g, buf):
        buf.add(a, g * keep)

    return Tensor._make(out, (a,), backward, "maximum")


# -- unary nonlinearities ------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g, buf):
        buf.add(a, g * out)

    return Tensor._make(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g, buf):
        buf.add(a, g / a.data)

    return Tensor._make(np.log(a.data), (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g, buf):
        buf.add(a, g * 0.5 / out)

    return Tensor._make(out, (a,), backward, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g, buf):
        buf.add(a, g * (1.0 - out * out))

    return Tensor._make(out, (a,), backward, "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)

    def backward(g, buf):
        buf.add(a, g * out * (1.0 - out))

    return Tensor._make(out, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g, buf):
        buf.add(a, g * _sigmoid_np(x))

    return Tensor._make(out, (a,), backward, "softplus")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g, buf):
        buf.add(a, g * mask)

    return Tensor._make(a.data * mask, (a,), backward, "relu")


# -- reductions ----------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g, buf):
        if not keepdims:
            g = np.expand_dims(g, axes)
        buf.add(a, np.broadcast_to(g, a.shape))

    return Tensor._make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tsum(a, axes, keepdims) * (1.0 / count)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s

    def backward(g, buf):
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf.add(a, g * soft)

    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return Tensor._make(out, (a,), backward, "logsumexp")


# -- linear algebra and shape --------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, buf):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            buf.add(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.outer(a.data, g)
            elif b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            buf.add(b, _unbroadcast(gb, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g, buf):
        buf.add(a, g.reshape(a.shape))

    return Tensor._make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g, buf):
        buf.add(a, np.transpose(g, inv))

    return Tensor._make(np.transpose(a.data, axes), (a,), backward, "transpose")


def getitem(a: Tensor, index) -> Tensor:
    def backward(g, buf):
        buf.add_at(a, index, g)

    return Tensor._make(a.data[index], (a,), backward, "getitem")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g, buf):
        for k, t in enumerate(tensors):
            buf.add(t, np.take(g, k, axis=axis))

    return Tensor._make(out, tensors, backward, "stack")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, buf):
        for k, t in enumerate(tensors):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[k], bounds[k + 1])
            buf.add(t, g[tuple(sl)])

    return Tensor._make(out, tensors, backward, "concat")


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
