"""Dense tensor math with reverse-mode differentiation.

A `Tensor` wraps a row-major numpy array and, while gradients are
enabled, remembers which operation produced it so `backward` can replay
the computation in reverse topological order.  The operation set is
deliberately small: exactly what an attention-based coupling network
needs, nothing more.

Precision discipline: every operation computes at the tensor's declared
float width (32 or 64 bit).  `matmul` additionally takes a
`PrecisionMode`; in FULL mode the product accumulates over the inner
dimension one index at a time, which makes the result bitwise identical
to a scalar triple-loop reference at the same width.  FAST mode defers
to the BLAS kernel.
"""

from __future__ import annotations

import contextlib
import math
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError, DTypeError, NumericError, UsageError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference / sampling)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class PrecisionMode(Enum):
    FAST = "fast"
    FULL = "full"


class Tensor:
    """Row-major float array, optionally tracked for reverse-mode gradients.

    Tensors are treated as immutable once produced; `grad` is the only
    mutable slot and exists only on gradient leaves (inputs created with
    ``requires_grad=True``), where it is zero-initialized and accumulated
    into by `backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def sum(self) -> "Tensor":
        return sum_all(self)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter:
    """Named learnable tensor with an always-allocated gradient buffer."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data, dtype=None):
        self.name = name
        self.value = Tensor(data, dtype=dtype, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.data.dtype

    def zero_grad(self) -> None:
        self.value.grad[...] = 0.0

    def assign(self, data: np.ndarray) -> None:
        """In-place overwrite of the value (optimizer / checkpoint restore)."""
        arr = np.asarray(data, dtype=self.value.data.dtype)
        if arr.shape != self.value.data.shape:
            raise DimensionError(
                f"parameter {self.name}: cannot assign shape {arr.shape} "
                f"over {self.value.data.shape}"
            )
        self.value.data[...] = arr

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise DTypeError(f"{op}: dtypes differ ({a.data.dtype.name} vs {b.data.dtype.name})")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "add")
    data = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _result(-a.data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "div")
    data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return _result(data, (a, b), backward)


def _matmul_raw(a: np.ndarray, b: np.ndarray, mode: PrecisionMode) -> np.ndarray:
    if mode is PrecisionMode.FULL:
        # Accumulate over the inner dimension in index order, rounding at the
        # declared width after every multiply and add.  Per element this is the
        # same operation sequence as a scalar triple loop, hence bitwise equal.
        out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
        for k in range(a.shape[1]):
            out += a[:, k, None] * b[None, k, :]
        return out
    return a @ b


def matmul(a: Tensor, b: Tensor, mode: PrecisionMode = PrecisionMode.FAST) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise UsageError("matmul expects two tensors")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul requires 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}"
        )
    _check_same_dtype(a, b, "matmul")
    data = _matmul_raw(a.data, b.data, mode)

    def backward(g):
        ga = _matmul_raw(g, b.data.T, mode) if a.requires_grad else None
        gb = _matmul_raw(a.data.T, g, mode) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose requires a 2-d tensor, got {a.data.shape}")
    data = np.ascontiguousarray(a.data.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return _result(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _result(data, (a,), backward)


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"col_slice requires a 2-d tensor, got {a.data.shape}")
    data = a.data[:, start:stop].copy()

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[:, start:stop] = g
        return (buf,)

    return _result(data, (a,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise UsageError("concat_cols on empty sequence")
    widths = [p.data.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        grads = []
        offset = 0
        for p, w in zip(parts, widths):
            grads.append(g[:, offset : offset + w] if p.requires_grad else None)
            offset += w
        return tuple(grads)

    return _result(data, tuple(parts), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    positive = x >= 0
    z = np.exp(np.where(positive, -x, x))
    out = np.where(positive, 1.0 / (1.0 + z), z / (1.0 + z))
    # Pin the output into the open interval so downstream logs stay finite
    # and scale factors never collapse to exactly 0 or saturate to 1.
    one = x.dtype.type(1.0)
    return np.clip(out, np.finfo(x.dtype).tiny, np.nextafter(one, x.dtype.type(0.0)))


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_raw(a.data)

    def backward(g):
        return (g * data * (1.0 - data),)

    return _result(data, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit x * Phi(x) (erf form, not tanh)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * x.dtype.type(_INV_SQRT2)))
    data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT_2PI)
        return (g * (cdf + x * pdf),)

    return _result(data.astype(x.dtype, copy=False), (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(data, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis (numerically shifted)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _result(data, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row zero-mean unit-variance normalization followed by affine gain/bias."""
    if eps <= 0:
        raise UsageError("layer_norm eps must be positive")
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm expects rows x width, got {x.data.shape}")
    width = x.data.shape[1]
    if gain.data.shape != (width,) or bias.data.shape != (width,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({width},), "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    _check_same_dtype(x, gain, "layer_norm")
    _check_same_dtype(x, bias, "layer_norm")
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gain.data
            gx = inv * (
                gxhat
                - gxhat.mean(axis=1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
            )
        ggain = (g * xhat).sum(axis=0) if gain.requires_grad else None
        gbias = g.sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _result(data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Populate gradients of every leaf reachable from the scalar `loss`.

    Gradients accumulate across calls until the leaves are cleared.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("backward called on a non-finite loss")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g.reshape(node.data.shape)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else held + pg


def require_finite(values, where: str) -> None:
    """Raise `NumericError` naming `where` if any value is NaN or infinite."""
    arr = values.data if isinstance(values, Tensor) else np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")
