"""Dense numpy-backed tensors with a dynamic reverse-mode tape.

Every op that sees an input with ``requires_grad`` records a node holding its
parents and a closure mapping the output gradient to parent gradients. The
tape is rebuilt on each forward pass; nothing is reused across iterations.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32

_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


_debug = False


def set_debug(enabled: bool) -> None:
    """When enabled, every op checks its output for NaN/Inf and raises NumericError."""
    global _debug
    _debug = bool(enabled)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return index(self, idx)

    def exp(self):
        return exp(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(a, b) -> tuple[Tensor, Tensor]:
    # Python scalars adopt the dtype of the tensor operand.
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it on the tape when any parent needs grad.

    ``backward_fn(grad)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data, dtype=data.dtype if data.dtype in (np.float32, np.float64) else None)
    if _debug and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite values produced by {getattr(backward_fn, '__qualname__', 'op')}")
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- element-wise --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1 - out * out),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise ContractError("only scalar exponents are supported")
    if p == 2:
        return make_op(a.data * a.data, (a,), lambda g: (2 * g * a.data,))
    return make_op(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    return power(a, 2)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    """``a`` where non-negative, ``slope * a`` otherwise (derivative 1 at zero)."""
    a = as_tensor(a)
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = a.data >= 0
    out = np.maximum(a.data, a.data * a.dtype.type(slope))

    def backward(g):
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return make_op(out, (a,), backward)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (np.where(inside, g, 0).astype(g.dtype, copy=False),)

    return make_op(out, (a,), backward)


# -- reductions (64-bit accumulation) ---------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return make_op(np.asarray(out), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    out = np.asarray(np.sum(a.data, dtype=np.float64) / n, dtype=a.dtype)

    def backward(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return make_op(out, (a,), backward)


# -- structural ------------------------------------------------------------


def index(a, idx) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing is not supported."""
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_op(np.ascontiguousarray(out), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty sequence")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"cannot concat shapes {ref} and {t.shape} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return make_op(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


# -- convolution -------------------------------------------------------------


def _im2col(xh: np.ndarray, k: int, p: int) -> np.ndarray:
    """(N,H,W,C) -> (N*Ho*Wo, k*k*C) patch matrix, taps ordered (ky, kx, c)."""
    n, h, w, c = xh.shape
    if p:
        xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=xh.dtype)
        xp[:, p : p + h, p : p + w] = xh
    else:
        xp = xh
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * c)


def conv2d(x, weight, bias=None, pad: int | None = None) -> Tensor:
    """Zero-padded, stride-1 cross-correlation.

    ``x`` is ``(C, H, W)`` or batched ``(N, C, H, W)``; ``weight`` is
    ``(C_out, C_in, k, k)``. Implemented as one GEMM over an im2col buffer laid
    out channels-last, which keeps the column copy contiguous.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d expects a 3-D or 4-D input, got shape {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D, got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if pad is None:
        pad = (kh - 1) // 2
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    n, c, h, w = xd.shape
    if c != c_in:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    p = pad
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d input {h}x{w} too small for kernel {kh} with pad {p}")

    cols = _im2col(xd.transpose(0, 2, 3, 1), kh, p)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(c_out, kh * kw * c)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    if unbatched:
        out = out[0]

    def backward(g):
        g4 = g[None] if unbatched else g
        gh = g4.transpose(0, 2, 3, 1)
        gm = gh.reshape(-1, c_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(c_out, kh, kw, c).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0, dtype=np.float64).astype(g.dtype)
        if x.requires_grad:
            # Adjoint of a stride-1 correlation: correlate the output gradient
            # with the spatially flipped, channel-transposed kernel.
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, kh * kw * c_out)
            gx = (_im2col(gh, kh, kh - 1 - p) @ wflip.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            if unbatched:
                gx = gx[0]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


# -- backward pass -----------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf needing grad.

    Gradients accumulate across calls until the leaves are zeroed.
    """
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not part of a recorded graph")
    seed = np.ones((), dtype=loss.dtype) if grad is None else np.asarray(grad, dtype=loss.dtype)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.dtype)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
