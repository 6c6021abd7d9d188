"""Reverse-mode automatic differentiation over dense float64 arrays.

Every forward op records its parents and a vector-Jacobian closure. Calling
:func:`backward` on a scalar root walks the graph once in reverse
topological order and *adds* the resulting partials into ``.grad`` of every
node that requires a gradient. Gradients are never reset implicitly; call
:meth:`Value.zero_grad` (or :meth:`Adam.zero_grad`) between steps.

Broadcasting is restricted to scalar-with-array: two operands must either
share a shape or one of them must hold exactly one element.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands of an op have incompatible shapes."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.op = op
        self.shapes = (a, b)


class DomainError(ValueError):
    """Input outside the domain of an op (e.g. log of a non-positive value)."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Value:
    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError("grad", self.data.shape, value.shape)
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Value":
        return Value(self.data.copy())

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, op={self.op or 'leaf'!r})"

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents: tuple[Value, ...], backward: BackwardFn, op: str) -> Value:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Value(data, op=op)
    return Value(data, True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    # operand was the single-element side of a scalar-with-array op
    return np.full(shape, g.sum())


def _check_binary(op: str, a: Value, b: Value) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(op, a.shape, b.shape)


def _out_shape(a: Value, b: Value) -> tuple:
    if a.shape == b.shape:
        return a.shape
    return a.shape if b.size == 1 else b.shape


def _bin_data(a: Value, b: Value, fn) -> np.ndarray:
    ad, bd = a.data, b.data
    if a.shape != b.shape:
        if a.size == 1:
            ad = ad.reshape(())
        if b.size == 1:
            bd = bd.reshape(())
    out = fn(ad, bd)
    return out.reshape(_out_shape(a, b))


# -- elementwise binary ops ------------------------------------------------
def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary("add", a, b)
    out = _bin_data(a, b, np.add)
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary("sub", a, b)
    out = _bin_data(a, b, np.subtract)
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_binary("mul", a, b)
    out = _bin_data(a, b, np.multiply)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(_bin_data(Value(g), b, np.multiply), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(_bin_data(Value(g), a, np.multiply), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "mul")


# -- linear algebra --------------------------------------------------------
def matmul(a, b) -> Value:
    """Matrix product of 2-D operands (a 1-D right operand is a column)."""
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.outer(g, b.data) if b.ndim == 1 else g @ b.data.T
        if b.requires_grad:
            gb = a.data.T @ g
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- elementwise unary ops -------------------------------------------------
def tanh(x) -> Value:
    x = as_value(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Value:
    x = as_value(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def exp(x) -> Value:
    x = as_value(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Value:
    x = as_value(x)
    if not np.all(np.isfinite(x.data)):
        raise DomainError("log: non-finite input")
    if np.any(x.data <= 0):
        raise DomainError(f"log: non-positive input (min {x.data.min():.3g})")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def abs(x) -> Value:  # noqa: A001 - mirrors numpy naming
    x = as_value(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x) -> Value:
    x = as_value(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sin(x) -> Value:
    x = as_value(x)
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def cos(x) -> Value:
    x = as_value(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cos")


# -- reductions and shape ops ----------------------------------------------
def reduce_sum(x, axis=None) -> Value:
    x = as_value(x)
    out = x.data.sum(axis=axis)
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), backward, "sum")


def log_softmax(x) -> Value:
    """Log-softmax along the last axis."""
    x = as_value(x)
    if not np.all(np.isfinite(x.data)):
        raise DomainError("log_softmax: non-finite input")
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), backward, "log_softmax")


def getitem(x, index) -> Value:
    """Basic slicing/indexing; backward scatters into a zero array."""
    x = as_value(x)
    out = x.data[index]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (x,), backward, "slice")


def concat(values: Sequence, axis: int = 0) -> Value:
    vals = [as_value(v) for v in values]
    if not vals:
        raise ValueError("concat: empty input")
    ref = vals[0].shape
    for v in vals[1:]:
        if v.ndim != len(ref) or any(
            i != axis % len(ref) and s != r for i, (s, r) in enumerate(zip(v.shape, ref))
        ):
            raise ShapeError("concat", ref, v.shape)
    out = np.concatenate([v.data for v in vals], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(vals))
        )

    return _make(out, tuple(vals), backward, "concat")


def reshape(x, shape) -> Value:
    x = as_value(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def frames(x, frame_len: int, hop: int) -> Value:
    """Overlapping frames of a 1-D signal as a (T, frame_len) Value."""
    x = as_value(x)
    if x.ndim != 1:
        raise ShapeError("frames", x.shape, (frame_len,))
    n = x.shape[0]
    if n < frame_len:
        raise ValueError(f"frames: signal of {n} samples is shorter than one frame ({frame_len})")
    t = 1 + (n - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(t)[:, None]
    out = x.data[idx]

    def backward(g):
        full = np.zeros(n)
        np.add.at(full, idx.ravel(), g.ravel())
        return (full,)

    return _make(out, (x,), backward, "frames")


def custom(data, parents: Sequence[Value], backward: BackwardFn, op: str) -> Value:
    """Wrap a fused primitive whose vector-Jacobian product is supplied."""
    return _make(data, tuple(parents), backward, op)


# -- backward pass ---------------------------------------------------------
def topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
    return order


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    ``root`` must hold a single element. Repeated calls add up.
    """
    if root.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node._grad = g.copy() if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, gp in zip(node._parents, node._backward(g)):
            if gp is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + gp
            else:
                pending[key] = np.asarray(gp, dtype=np.float64).reshape(parent.shape)


# -- optimizer -------------------------------------------------------------
class AdamState:
    """Per-parameter first/second moment buffers and the shared step count."""

    def __init__(self):
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}


def adam_step(
    params: Iterable[Value],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``param.data``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Value], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
