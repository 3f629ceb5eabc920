"""Dense float tensors with reverse-mode automatic differentiation.

A deliberately small engine: float32/float64 numpy arrays, a tape of
primitive ops replayed in exact reverse creation order, and the
operations a 1-D convolutional encoder-decoder and its distillation
losses need. Broadcasting is restricted to scalar-against-tensor and
equal shapes; anything wider goes through an explicit ``expand_axis``.

Tensors are immutable by convention: ops return fresh tensors, and the
only mutation is gradient accumulation during a single backward pass.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, GraphError, ShapeError

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_seq_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (frozen teacher, evaluation)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _SUPPORTED_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_seq", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._seq = next(_seq_counter)
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(Tensor(np.asarray(other, dtype=self.dtype)), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(Tensor(np.asarray(other, dtype=self.dtype)), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def abs(self):
        return absolute(self)

    def pow(self, p):
        return power(self, p)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, ax0, ax1):
        return transpose_axes(self, ax0, ax1)

    def backward(self):
        backward(self)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    The tape is replayed in exact reverse creation order, so gradient
    accumulation is order-deterministic. A second backward on the same
    loss is rejected; rebuild the graph instead.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise GraphError("backward was already called on this tensor")
    loss._done = True

    nodes = []
    seen = {id(loss)}
    keep = {id(loss): loss}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._vjp is not None:
            nodes.append(t)
        for p in t._parents:
            if id(p) not in seen:
                seen.add(id(p))
                keep[id(p)] = p
                stack.append(p)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg

    for tid, g in grads.items():
        leaf = keep[tid]
        if leaf._vjp is None and leaf.requires_grad:
            leaf.grad = g if leaf.grad is None else leaf.grad + g


# -- elementwise --------------------------------------------------------

def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(
            f"elementwise op needs equal shapes or a scalar operand, got {a.shape} vs {b.shape}"
        )
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum().reshape(shape).astype(g.dtype)


def add(a, b):
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return _record(ad + bd, (a, b), vjp)


def sub(a, b):
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)

    return _record(ad - bd, (a, b), vjp)


def mul(a, b):
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), vjp)


def div(a, b):
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("division by zero")

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _record(ad / bd, (a, b), vjp)


def neg(x: Tensor):
    return _record(-x.data, (x,), lambda g: (-g,))


def absolute(x: Tensor):
    xd = x.data
    return _record(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def power(x: Tensor, p) -> Tensor:
    """x**p with a scalar exponent. Subgradient at x == 0 is 0 when the
    true derivative is unbounded there (p < 1)."""
    p = float(p)
    xd = x.data
    if p != int(p) and np.any(xd < 0):
        raise DomainError("pow with a fractional exponent needs a non-negative base")
    if p < 0 and np.any(xd == 0):
        raise DomainError("pow with a negative exponent needs a nonzero base")
    out = np.power(xd, p)

    def vjp(g):
        if p >= 1:
            d = p * np.power(xd, p - 1.0)
        else:
            safe = np.where(xd == 0.0, 1.0, xd)
            d = np.where(xd == 0.0, 0.0, p * np.power(safe, p - 1.0))
        return (g * d,)

    return _record(out, (x,), vjp)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor):
    out = _stable_sigmoid(x.data)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor):
    out = np.tanh(x.data)
    return _record(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor):
    xd = x.data
    return _record(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


def exp(x: Tensor):
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x: Tensor):
    xd = x.data
    if np.any(xd <= 0.0):
        raise DomainError("log needs strictly positive input")
    return _record(np.log(xd), (x,), lambda g: (g / xd,))


# -- reductions ----------------------------------------------------------

def _check_axis(x: Tensor, axis):
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"reduce axis {axis} out of range for rank {x.ndim}")


def reduce_sum(x: Tensor, axis=None, keepdims=False):
    _check_axis(x, axis)
    xd = x.data
    out = xd.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            gx = np.broadcast_to(g.reshape((1,) * xd.ndim), xd.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gg, xd.shape)
        return (gx,)

    return _record(out, (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims=False):
    _check_axis(x, axis)
    xd = x.data
    count = xd.size if axis is None else xd.shape[axis]
    out = xd.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            gx = np.broadcast_to(g.reshape((1,) * xd.ndim), xd.shape)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(gg, xd.shape)
        return (gx / count,)

    return _record(out, (x,), vjp)


def reduce_max(x: Tensor, axis=None, keepdims=False):
    """Max reduction; the gradient routes to the first maximal element."""
    _check_axis(x, axis)
    xd = x.data
    out = xd.max(axis=axis, keepdims=keepdims)

    def vjp(g):
        gx = np.zeros_like(xd)
        if axis is None:
            idx = np.unravel_index(np.argmax(xd), xd.shape)
            gx[idx] = g.reshape(())
        else:
            idx = np.expand_dims(np.argmax(xd, axis=axis), axis)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(gx, idx, np.take_along_axis(np.zeros_like(xd), idx, axis) + gg, axis)
        return (gx,)

    return _record(out, (x,), vjp)


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor):
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    if ad.ndim == 2 and bd.ndim == 2:
        def vjp(g):
            return g @ bd.T, ad.T @ g
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul batch dimensions disagree: {ad.shape} @ {bd.shape}")

        def vjp(g):
            return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g
    elif ad.ndim == 3 and bd.ndim == 2:
        def vjp(g):
            return g @ bd.T, np.tensordot(ad, g, axes=([0, 1], [0, 1]))
    else:
        raise ShapeError(f"matmul supports 2-D and 3-D operands, got {ad.shape} @ {bd.shape}")
    return _record(ad @ bd, (a, b), vjp)


def softmax(x: Tensor):
    """Softmax over the last axis, stabilized by max subtraction."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (x,), vjp)


# -- structure -----------------------------------------------------------

def cast(x: Tensor, dtype):
    """Dtype conversion with an identity (re-cast) gradient."""
    dtype = np.dtype(dtype)
    if dtype not in _SUPPORTED_DTYPES:
        raise ShapeError(f"unsupported dtype {dtype}")
    xd = x.data
    return _record(xd.astype(dtype), (x,), lambda g: (g.astype(xd.dtype),))


def reshape(x: Tensor, shape):
    xd = x.data
    return _record(xd.reshape(shape), (x,), lambda g: (g.reshape(xd.shape),))


def transpose_axes(x: Tensor, ax0: int, ax1: int):
    return _record(np.swapaxes(x.data, ax0, ax1), (x,), lambda g: (np.swapaxes(g, ax0, ax1),))


def concat(parts, axis: int):
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    datas = [p.data for p in parts]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(np.concatenate(datas, axis=axis), parts, vjp)


def slice_axis(x: Tensor, axis: int, start: int, stop: int):
    xd = x.data
    sl = [slice(None)] * xd.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def vjp(g):
        gx = np.zeros_like(xd)
        gx[sl] = g
        return (gx,)

    return _record(xd[sl].copy(), (x,), vjp)


def downsample_time(x: Tensor, step: int):
    """Keep every step-th sample of the last axis."""
    if step < 1:
        raise ShapeError("downsample step must be >= 1")
    xd = x.data

    def vjp(g):
        gx = np.zeros_like(xd)
        gx[..., ::step] = g
        return (gx,)

    return _record(xd[..., ::step].copy(), (x,), vjp)


def pad_end(x: Tensor, n: int):
    """Right-pad the last axis with n zeros."""
    if n < 0:
        raise ShapeError("pad length must be non-negative")
    xd = x.data
    t = xd.shape[-1]
    width = [(0, 0)] * (xd.ndim - 1) + [(0, n)]
    return _record(np.pad(xd, width), (x,), lambda g: (g[..., :t],))


def expand_axis(x: Tensor, axis: int, n: int):
    """Broadcast a size-1 axis to extent n; the gradient sums back."""
    xd = x.data
    if xd.shape[axis] != 1:
        raise ShapeError(f"expand_axis needs extent 1 on axis {axis}, got {xd.shape}")
    return _record(np.repeat(xd, n, axis=axis), (x,), lambda g: (g.sum(axis=axis, keepdims=True),))


# -- convolution ---------------------------------------------------------

def _conv_checks(x: Tensor, w: Tensor, bias, stride: int, padding: int, transposed: bool):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [batch, channels, time], got shape {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"conv weight must be rank 3, got shape {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    cx = x.shape[1]
    cw = w.shape[0]
    if cx != cw:
        kind = "transposed conv" if transposed else "conv"
        raise ShapeError(f"{kind} input has {cx} channels but weight expects {cw}")
    if bias is not None:
        cout = w.shape[1] if transposed else w.shape[0]
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0):
    """Strided cross-correlation. x: [B, Cin, t], w: [Cout, Cin, k].

    Output length is floor((t + 2*padding - k) / stride) + 1.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [batch, channels, time], got shape {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"conv weight must be [out, in, kernel], got shape {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    B, ci, t = x.shape
    co, ciw, k = w.shape
    if ciw != ci:
        raise ShapeError(f"conv input has {ci} channels but weight expects {ciw}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias shape {bias.shape} does not match {co} output channels")
    if t + 2 * padding < k:
        raise ShapeError(f"input length {t} with padding {padding} is shorter than kernel {k}")

    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    to = (t + 2 * padding - k) // stride + 1
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    win2 = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * to, ci * k)
    w2 = wd.reshape(co, ci * k)
    out = np.ascontiguousarray((win2 @ w2.T).reshape(B, to, co).transpose(0, 2, 1))
    if bias is not None:
        out += bias.data[None, :, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * to, co)
        gw = (g2.T @ win2).reshape(co, ci, k)
        gpatch = (g2 @ w2).reshape(B, to, ci, k).transpose(0, 2, 1, 3)
        gxp = np.zeros((B, ci, t + 2 * padding), dtype=g.dtype)
        for j in range(k):
            gxp[:, :, j : j + stride * to : stride] += gpatch[:, :, :, j]
        gx = gxp[:, :, padding : padding + t] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _record(out, parents, vjp)


def conv1d_transposed(x: Tensor, w: Tensor, bias: Tensor | None = None,
                      stride: int = 1, padding: int = 0):
    """Transposed conv (adjoint of conv1d). x: [B, Cin, t], w: [Cin, Cout, k].

    Output length is (t - 1) * stride - 2*padding + k. With the same
    weight array, <conv1d(x, w), y> == <x, conv1d_transposed(y, w)>.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [batch, channels, time], got shape {x.shape}")
    if w.ndim != 3:
        raise ShapeError(f"transposed conv weight must be [in, out, kernel], got shape {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    B, ci, t = x.shape
    ciw, co, k = w.shape
    if ciw != ci:
        raise ShapeError(f"transposed conv input has {ci} channels but weight expects {ciw}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias shape {bias.shape} does not match {co} output channels")
    to = (t - 1) * stride - 2 * padding + k
    if to < 1:
        raise ShapeError(f"transposed conv output length {to} is not positive")

    xd, wd = x.data, w.data
    x2 = np.ascontiguousarray(xd.transpose(0, 2, 1)).reshape(B * t, ci)
    w2 = wd.reshape(ci, co * k)
    cols = (x2 @ w2).reshape(B, t, co, k).transpose(0, 2, 1, 3)
    full_len = (t - 1) * stride + k
    full = np.zeros((B, co, full_len), dtype=xd.dtype)
    for j in range(k):
        full[:, :, j : j + stride * t : stride] += cols[:, :, :, j]
    out = np.ascontiguousarray(full[:, :, padding : padding + to])
    if bias is not None:
        out += bias.data[None, :, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gp = np.zeros((B, co, full_len), dtype=g.dtype)
        gp[:, :, padding : padding + to] = g
        win = sliding_window_view(gp, k, axis=2)[:, :, ::stride, :]
        win2 = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * t, co * k)
        gx = np.ascontiguousarray((win2 @ w2.T).reshape(B, t, ci).transpose(0, 2, 1))
        gw = (x2.T @ win2).reshape(ci, co, k)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _record(out, parents, vjp)


def depthwise_conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, padding: int = 0):
    """Per-channel (depthwise) convolution, stride 1. x: [B, C, t], w: [C, k]."""
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"depthwise conv needs x rank 3 and w rank 2, got {x.shape}, {w.shape}")
    B, c, t = x.shape
    cw, k = w.shape
    if cw != c:
        raise ShapeError(f"depthwise conv input has {c} channels but weight expects {cw}")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c} channels")
    if t + 2 * padding < k:
        raise ShapeError(f"input length {t} with padding {padding} is shorter than kernel {k}")

    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    to = t + 2 * padding - k + 1
    out = np.zeros((B, c, to), dtype=xd.dtype)
    for j in range(k):
        out += xp[:, :, j : j + to] * wd[:, j][None, :, None]
    if bias is not None:
        out += bias.data[None, :, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gw[:, j] = (g * xp[:, :, j : j + to]).sum(axis=(0, 2))
            gxp[:, :, j : j + to] += g * wd[:, j][None, :, None]
        gx = gxp[:, :, padding : padding + t] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _record(out, parents, vjp)


# -- resampling and spectra ----------------------------------------------

def interpolate_linear(x: Tensor, target_len: int):
    """Endpoint-aligned linear interpolation along the last axis.

    First and last samples are preserved; equal lengths are an identity.
    """
    if target_len < 1:
        raise ShapeError(f"target_len must be >= 1, got {target_len}")
    xd = x.data
    t = xd.shape[-1]
    if t < 1:
        raise ShapeError("input length must be >= 1")
    if target_len == t:
        return _record(xd.copy(), (x,), lambda g: (g,))
    if t == 1:
        return _record(
            np.repeat(xd, target_len, axis=-1), (x,),
            lambda g: (g.sum(axis=-1, keepdims=True),),
        )

    pos = np.arange(target_len) * ((t - 1) / (target_len - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), t - 2)
    hi = lo + 1
    f = (pos - lo).astype(xd.dtype)
    out = xd[..., lo] * (1.0 - f) + xd[..., hi] * f

    def vjp(g):
        lead = xd.shape[:-1]
        g2 = g.reshape(-1, target_len)
        gxT = np.zeros((t, g2.shape[0]), dtype=g.dtype)
        np.add.at(gxT, lo, (g2 * (1.0 - f)).T)
        np.add.at(gxT, hi, (g2 * f).T)
        return (gxT.T.reshape(*lead, t),)

    return _record(out, (x,), vjp)


def frame_signal(x: Tensor, window_len: int, hop: int):
    """Split the last axis into hop-strided frames: [..., t] -> [..., n, window_len]."""
    xd = x.data
    t = xd.shape[-1]
    if t < window_len:
        raise ShapeError(f"signal length {t} is shorter than one window of {window_len}")
    if hop < 1:
        raise ShapeError("hop must be >= 1")
    n = 1 + (t - window_len) // hop
    frames = sliding_window_view(xd, window_len, axis=-1)[..., ::hop, :]
    out = np.ascontiguousarray(frames)

    def vjp(g):
        gx = np.zeros_like(xd)
        for i in range(n):
            gx[..., i * hop : i * hop + window_len] += g[..., i, :]
        return (gx,)

    return _record(out, (x,), vjp)


def rdft(x: Tensor, fft_size: int):
    """Real DFT of the last axis, zero-padded to fft_size.

    Returns real and imaginary parts concatenated on the last axis:
    [..., m] -> [..., 2 * (fft_size // 2 + 1)].
    """
    xd = x.data
    m = xd.shape[-1]
    if fft_size < m:
        raise ShapeError(f"fft_size {fft_size} is smaller than frame length {m}")
    if fft_size % 2 != 0:
        raise ShapeError("fft_size must be even")
    bins = fft_size // 2 + 1
    spec = np.fft.rfft(xd, n=fft_size, axis=-1)
    out = np.concatenate([spec.real, spec.imag], axis=-1).astype(xd.dtype)

    def vjp(g):
        gre = g[..., :bins].astype(np.float64)
        gim = g[..., bins:].astype(np.float64)
        G = gre + 1j * gim
        # DC and Nyquist imaginary parts are structurally zero; drop them
        # so irfft sees a clean Hermitian half-spectrum.
        G[..., 0] = gre[..., 0]
        G[..., -1] = gre[..., -1]
        G[..., 1:-1] *= 0.5
        gx = np.fft.irfft(G, n=fft_size, axis=-1) * fft_size
        return (gx[..., :m].astype(xd.dtype),)

    return _record(out, (x,), vjp)
