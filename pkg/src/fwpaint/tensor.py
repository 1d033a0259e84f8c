"""Dense tensors with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations executed while a
:class:`Tape` is active, and touching at least one tensor that requires a
gradient, are appended to the tape together with a closure mapping the
output gradient to parent gradients. :func:`backward` walks the tape in
reverse creation order, which is a valid topological order by construction.

Outside of a tape every op is a plain numpy computation, which is what the
inference paths (sampling, evaluation) rely on for speed.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "DimensionError", "RankError", "NumericError", "UsageError",
    "tensor", "backward", "no_grad_arrays",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "outer", "batch_outer",
    "softmax", "log_softmax", "sigmoid", "tanh", "relu", "leaky_relu", "exp", "log",
    "absolute", "power", "clamp_st", "sum", "mean", "reshape", "transpose", "concat",
    "split", "stack", "conv2d", "conv_transpose2d", "box_downsample",
]

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class RankError(DimensionError):
    """Operand has the wrong number of dimensions."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class UsageError(RuntimeError):
    """The tape was used out of protocol (double backward, re-entry, ...)."""


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; ops run inside the ``with`` block are recorded
    on the innermost active tape. A tape supports exactly one backward pass.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False
        self._entered = False

    def __enter__(self) -> "Tape":
        if self._entered:
            raise UsageError("tape re-entry: a Tape may only be entered once")
        self._entered = True
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.remove(self)

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], fn: Callable) -> None:
        out._tape = self
        self.nodes.append((out, parents, fn))

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """n-dimensional float array with an optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_tape", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: Tape | None = None

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
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=20)}{flag})"

    __hash__ = object.__hash__

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

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


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    """Wrap an op result, recording it when a tape is active and needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._tape = None
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        tape.record(out, parents, fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Returns a map from leaf tensor to its gradient contribution from this
    pass. The tape that produced ``loss`` is consumed.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise UsageError("loss was not produced under an active tape")
    if tape.consumed:
        raise UsageError("double backward: this tape has already been consumed")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, parents, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        pgrads = fn(g)
        for p, pg in zip(parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if p._tape is None:
                leaves[key] = p
    tape.nodes.clear()

    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(leaf.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


class no_grad_arrays:
    """Temporarily mark tensors as not requiring gradients (freezing)."""

    def __init__(self, tensors: Iterable[Tensor]) -> None:
        self.tensors = list(tensors)
        self._saved: list[bool] = []

    def __enter__(self):
        self._saved = [t.requires_grad for t in self.tensors]
        for t in self.tensors:
            t.requires_grad = False
        return self

    def __exit__(self, *exc):
        for t, flag in zip(self.tensors, self._saved):
            t.requires_grad = flag


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _make(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype, copy=False)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def power(x: Tensor, p: float) -> Tensor:
    return _make(x.data ** p, (x,), lambda g: (g * p * x.data ** (p - 1),))


def clamp_st(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to ``[lo, hi]`` with a straight-through gradient."""
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("softmax: NaN in input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=x.dtype)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(out, (x,), fn)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def fn(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True) if not basic else out, (x,), fn)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack: {[t.shape for t in tensors]}: {e}") from None
    n = len(tensors)
    return _make(out, tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split ``x`` into consecutive pieces of the given sizes along ``axis``."""
    if int(np.sum(sizes)) != x.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    ax = axis % x.ndim
    pieces, start = [], 0
    for s in sizes:
        sl = (slice(None),) * ax + (slice(start, start + s),)
        pieces.append(_getitem(x, sl))
        start += s
    return pieces


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics on leading dimensions."""
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(f"matmul needs operands of rank >= 2, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(out, (a, b), fn)


def outer(u: Tensor, v: Tensor) -> Tensor:
    """Outer product of two vectors: ``out[i, j] = u[i] * v[j]``."""
    if u.ndim != 1 or v.ndim != 1:
        raise RankError(f"outer needs two 1-D tensors, got shapes {u.shape} and {v.shape}")
    return _make(np.outer(u.data, v.data), (u, v),
                 lambda g: (g @ v.data, g.T @ u.data))


def batch_outer(u: Tensor, v: Tensor) -> Tensor:
    """Outer product over the last axis with shared leading (batch) axes."""
    if u.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"batch_outer: leading shapes differ: {u.shape} vs {v.shape}")
    ud, vd = u.data[..., :, None], v.data[..., None, :]
    return _make(ud * vd, (u, v),
                 lambda g: ((g * vd).sum(-1), (g * ud).sum(-2)))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) padded input -> (N, Ho, Wo, C*kh*kw) patches."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)


def _col2im(cols: np.ndarray, shape_p: tuple[int, ...], kh: int, kw: int, stride: int) -> np.ndarray:
    """Scatter-add (N, Ho, Wo, C*kh*kw) patches back into a padded (N, C, Hp, Wp) array."""
    n, ho, wo, _ = cols.shape
    c = shape_p[1]
    cols = np.ascontiguousarray(cols.reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2))
    out = np.zeros(shape_p, dtype=cols.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i: i + hs: stride, j: j + ws: stride] += cols[i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (N, C, H, W); ``w``: (O, C, kh, kw); ``b``: (O,)."""
    if x.ndim != 4 or w.ndim != 4:
        raise RankError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv2d: input channels {c} (shape {x.shape}) != weight channels {cw} (shape {w.shape})")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {w.shape} too large for input {x.shape}")
    xp = _pad(x.data, padding)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = w.data.reshape(o, -1)
    out = cols @ wm.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def fn(g):
        gt = g.transpose(0, 2, 3, 1)  # N, Ho, Wo, O
        gx = gw = gb = None
        if x.requires_grad:
            gxp = _col2im(gt @ wm, xp.shape, kh, kw, stride)
            gx = gxp[:, :, padding: padding + h, padding: padding + wd] if padding else gxp
        if w.requires_grad:
            gw = (gt.reshape(-1, o).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, fn)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution (adjoint of :func:`conv2d`).

    ``x``: (N, C, H, W); ``w``: (C, O, kh, kw). Output spatial size is
    ``(H - 1) * stride - 2 * padding + kh``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise RankError(f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    cw, o, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv_transpose2d: input channels {c} (shape {x.shape}) != weight rows {cw} (shape {w.shape})")
    hp = (h - 1) * stride + kh
    wp = (wd - 1) * stride + kw
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv_transpose2d: padding {padding} too large for {x.shape}")
    wm = w.data.reshape(c, -1)  # C, O*kh*kw
    xt = x.data.transpose(0, 2, 3, 1)  # N, H, W, C
    cols = xt @ wm
    outp = _col2im(cols, (n, o, hp, wp), kh, kw, stride)
    out = outp[:, :, padding: padding + ho, padding: padding + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def fn(g):
        gp = _pad(g, padding)
        gcols = _im2col(gp, kh, kw, stride, h, wd)  # N, H, W, O*kh*kw
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wm.T).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = (xt.reshape(-1, c).T @ gcols.reshape(-1, gcols.shape[-1])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, fn)


def box_downsample(x: Tensor, factor: int) -> Tensor:
    """Average non-overlapping ``factor`` x ``factor`` blocks of the last two axes."""
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise DimensionError(f"box_downsample: spatial shape {(h, w)} not divisible by {factor}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(lead + (h // factor, factor, w // factor, factor))
    out = blocks.mean(axis=(-3, -1))
    inv = x.dtype.type(1.0 / (factor * factor))

    def fn(g):
        gb = np.broadcast_to(g[..., :, None, :, None] * inv, blocks.shape)
        return (gb.reshape(x.shape),)

    return _make(out, (x,), fn)
