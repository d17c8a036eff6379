"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in row-major layout. Every differentiable
operation records a node on a thread-local dynamic tape; ``backward``
walks the tape once in reverse execution order, accumulates gradients
into every tensor that requires them, and frees the tape.

Two precisions are supported: float32 (the training default) and
float64 (used by the finite-difference verification harness, where
float32 round-off would swamp the comparison).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _special

from .errors import NumericError, ShapeError, UsageError

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class Tape:
    """Execution-ordered record of differentiable ops for one pass."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], grad_fn: Callable):
        self._nodes.append((out, inputs, grad_fn))

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self):
        self._nodes.clear()


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True
        self.checked = False


_state = _State()


def active_tape() -> Tape:
    return _state.tape


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def checked(enabled: bool = True):
    """Raise NumericError if any op in the block produces NaN/Inf."""
    prev = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


class Tensor:
    """A dense array plus optional gradient buffer.

    Ops never mutate their inputs; the only sanctioned in-place writes
    are optimizer updates to parameter ``data`` between passes.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _from_op(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        backward(self)

    def _accum_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all routed through the op functions below.
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _bad_item(t: Tensor):
    raise UsageError(f"item() requires a single-element tensor, got shape {t.shape}")


def as_tensor(x, ref: Tensor | None = None) -> Tensor:
    """Wrap plain values as constant tensors, matching ref's dtype."""
    if isinstance(x, Tensor):
        return x
    dtype = ref.data.dtype if ref is not None else None
    return Tensor(np.asarray(x), requires_grad=False, dtype=dtype)


def _check_finite(opname: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {opname}")


def _apply(opname: str, arr: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    if _state.checked:
        _check_finite(opname, arr)
    requires = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(arr, requires)
    if requires:
        _state.tape.record(out, inputs, grad_fn)
    return out


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss through the tape.

    Gradients accumulate into ``.grad`` (repeated backwards without a
    zero_grad add up). The tape is freed afterwards.
    """
    if loss.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    # Freshly allocated gradient arrays are adopted without copying;
    # anything already adopted, viewed or read-only is copied so no two
    # tensors ever share (and later corrupt) a gradient buffer.
    adopted: set[int] = set()

    def accum(t: Tensor, g: np.ndarray):
        if t.grad is None:
            if (g.flags.owndata and g.flags.writeable
                    and g.dtype == t.data.dtype and id(g) not in adopted):
                t.grad = g
            else:
                t.grad = np.array(g, dtype=t.data.dtype)
            adopted.add(id(t.grad))
        else:
            t.grad += g

    accum(loss, np.ones(loss.shape, dtype=loss.data.dtype))
    try:
        for out, inputs, grad_fn in reversed(tape._nodes):
            g = out.grad
            if g is None:
                continue
            grads = grad_fn(g)
            for t, gi in zip(inputs, grads):
                if gi is not None and t.requires_grad:
                    accum(t, gi)
    finally:
        tape.clear()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic ---

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    arr = a.data + b.data

    def grad_fn(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _apply("add", arr, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    arr = a.data - b.data

    def grad_fn(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _apply("sub", arr, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    arr = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _apply("mul", arr, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    arr = a.data / b.data

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            if b.requires_grad
            else None
        )
        return (ga, gb)

    return _apply("div", arr, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


# --- linear algebra ---

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    try:
        arr = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} x {b.shape}") from e

    def grad_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _apply("matmul", arr, (a, b), grad_fn)


# --- shape manipulation ---

def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape) if isinstance(shape, Iterable) else (shape,)
    try:
        arr = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from e
    return _apply("reshape", arr, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    arr = np.transpose(a.data, axes)
    return _apply("transpose", arr, (a,), lambda g: (np.transpose(g, inv),))


def slice_(a: Tensor, key) -> Tensor:
    """Basic (view) indexing with ints and slices."""
    a = as_tensor(a)
    arr = a.data[key]

    def grad_fn(g):
        gx = np.zeros(a.shape, dtype=g.dtype)
        gx[key] = g
        return (gx,)

    return _apply("slice", arr, (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("concat requires at least one tensor")
    try:
        arr = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat shapes incompatible: {[t.shape for t in ts]}") from e
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, ts))

    return _apply("concat", arr, tuple(ts), grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [reshape(as_tensor(t), t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(ts, axis=axis)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        arr = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from e
    return _apply("broadcast", arr, (a,), lambda g: (_unbroadcast(g, a.shape),))


# --- reductions ---

def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    arr = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _apply("sum", arr, (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    arr = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // arr.size if arr.size else 1

    def grad_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _apply("mean", arr, (a,), grad_fn)


# --- elementwise nonlinearities ---

def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    arr = np.sqrt(a.data)

    def grad_fn(g):
        # Subgradient 0 at the origin keeps exact-zero radicands finite.
        d = np.zeros_like(arr)
        mask = arr > 0
        np.divide(0.5, arr, out=d, where=mask)
        return (g * d,)

    return _apply("sqrt", arr, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    arr = np.maximum(a.data, 0)
    return _apply("relu", arr, (a,), lambda g: (g * (a.data > 0),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + _special.erf(a.data * _INV_SQRT2))
    arr = a.data * cdf

    def grad_fn(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return _apply("gelu", arr, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    arr = _special.expit(a.data)
    return _apply("sigmoid", arr, (a,), lambda g: (g * arr * (1.0 - arr),))


def abs_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    arr = np.abs(a.data)
    return _apply("abs", arr, (a,), lambda g: (g * np.sign(a.data),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along one axis."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    arr = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(arr, out=arr)
    arr /= arr.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        out = g * arr
        dot = out.sum(axis=axis, keepdims=True)
        np.subtract(g, dot, out=out)
        out *= arr
        return (out,)

    return _apply("softmax", arr, (a,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = as_tensor(x)
    gain = as_tensor(gain, x)
    bias = as_tensor(bias, x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    arr = xhat * gain.data + bias.data

    def grad_fn(g):
        gx = gg = gb = None
        lead = tuple(range(g.ndim - 1))
        if bias.requires_grad:
            gb = g.sum(axis=lead)
        if gain.requires_grad:
            gg = (g * xhat).sum(axis=lead)
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            gx = (gh - m1 - xhat * m2) * inv
        return (gx, gg, gb)

    return _apply("layer_norm", arr, (x, gain, bias), grad_fn)
