"""Differentiable operators.

Shapes are never broadcast implicitly: binary ops accept either two tensors of
identical shape or a tensor and a python/0-d scalar.  Use :func:`expand` to
align shapes explicitly.
"""

from __future__ import annotations

import numbers

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor

_make = Tensor._from_op


def _is_scalar(x):
    if isinstance(x, numbers.Real):
        return True
    if isinstance(x, np.ndarray) and x.ndim == 0:
        return True
    return False


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(op, b.shape, a.shape)


# elementwise binary ------------------------------------------------------------

def add(a, b):
    a = as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add")
    b = as_tensor(b)
    _check_same("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a = as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _make(a.data - c, (a,), lambda g: (g,), "sub")
    b = as_tensor(b)
    _check_same("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a = as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul")
    b = as_tensor(b)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch("matmul", b.shape, (*a.shape[:-2], a.shape[-1], "*"))
    ad, bd = a.data, b.data

    def bw(g):
        return np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g)

    return _make(np.matmul(ad, bd), (a, b), bw, "matmul")


# elementwise unary -------------------------------------------------------------

def relu(x):
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow."""
    d = x.data
    out = np.minimum(d, 0.0) - np.log1p(np.exp(-np.abs(d)))
    e = np.exp(-np.abs(d))
    sig_neg = np.where(d >= 0, e / (1.0 + e), 1.0 / (1.0 + e))  # sigmoid(-x)
    return _make(out, (x,), lambda g: (g * sig_neg,), "log_sigmoid")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    d = x.data
    return _make(np.log(d), (x,), lambda g: (g / d,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(x):  # noqa: A001 - mirrors numpy naming
    s = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def square(x):
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,), "square")


def clamp(x, lo=None, hi=None):
    d = x.data
    out = np.clip(d, lo, hi)
    mask = (out == d).astype(np.float64)
    return _make(out, (x,), lambda g: (g * mask,), "clamp")


# reductions --------------------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis=-1):
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / ||x|| along ``axis``; vectors with norm below ``eps`` map to x/eps."""
    d = x.data
    norm = np.sqrt(np.sum(d * d, axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = d / denom
    big = norm > eps

    def bw(g):
        radial = np.sum(g * out, axis=axis, keepdims=True)
        return (np.where(big, (g - out * radial) / denom, g / denom),)

    return _make(out, (x,), bw, "l2_normalize")


# shape ops ---------------------------------------------------------------------

def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def expand(x, shape):
    """Explicit broadcast of size-1 axes to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if x.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(x.shape, shape)):
        raise ShapeMismatch("expand", x.shape, shape)
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, (x,), lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def concat(xs, axis=0):
    xs = [as_tensor(t) for t in xs]
    ref = list(xs[0].shape)
    for t in xs[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref))
                                         if i != axis % len(ref)):
            raise ShapeMismatch("concat", t.shape, tuple(ref))
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw, "concat")


def index(x, key):
    """Basic or advanced indexing (``x[key]``); gradients scatter-add back."""
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, key, g)
        return (out,)

    return _make(np.array(x.data[key], dtype=np.float64), (x,), bw, "index")


def slice(x, key):  # noqa: A001
    """Basic slicing; the backward writes into a zero array without add.at."""
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=np.float64)
        out[key] = g
        return (out,)

    return _make(x.data[key].copy(), (x,), bw, "slice")


# spatial ops (NCHW) ------------------------------------------------------------

def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv2d(x, w, b=None, stride=1, padding=None):
    """2-D cross-correlation.  ``w`` is (out_c, in_c, kh, kw); ``b`` is (out_c,)."""
    if x.ndim != 4:
        raise ShapeMismatch("conv2d", x.shape, ("N", "C", "H", "W"))
    oc, ic, kh, kw = w.shape
    n, c, h, wd = x.shape
    if c != ic:
        raise ShapeMismatch("conv2d", x.shape, (n, ic, h, wd))
    if b is not None and b.shape != (oc,):
        raise ShapeMismatch("conv2d.bias", b.shape, (oc,))
    if padding is None:
        padding = kh // 2
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - kh) // stride + 1
    wo = (wd + 2 * p - kw) // stride + 1
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.transpose(1, 0, 2, 3).reshape(c, n * ho * wo)
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = w.data.reshape(oc, -1)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(oc, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(oc, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = w2.T @ g2
            if kh == 1 and kw == 1 and stride == 1:
                gx = gcols.reshape(c, n, ho, wo).transpose(1, 0, 2, 3)
                if p:
                    gx = gx[:, :, p:-p, p:-p]
                gx = np.ascontiguousarray(gx)
            else:
                gcols = gcols.reshape(c, kh, kw, n, ho, wo)
                gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=np.float64)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            gcols[:, i, j].transpose(1, 0, 2, 3)
                gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "conv2d")


def maxpool2(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch("maxpool2", x.shape, (n, c, "even", "even"))
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4), dtype=np.float64)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return _make(out, (x,), bw, "maxpool2")


def avgpool(x, window):
    n, c, h, w = x.shape
    k = window
    if h % k or w % k:
        raise ShapeMismatch("avgpool", x.shape, (n, c, f"x{k}", f"x{k}"))
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _make(out, (x,), bw, "avgpool")


def _interp_matrix(size, factor):
    """Row i gives the bilinear weights of output i (half-pixel centres)."""
    out = size * factor
    m = np.zeros((out, size), dtype=np.float64)
    for o in range(out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), size - 1)
        i1 = min(i0 + 1, size - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m


def upsample_bilinear(x, factor=2):
    n, c, h, w = x.shape
    uh = _interp_matrix(h, factor)
    uw = _interp_matrix(w, factor)
    out = np.matmul(uh, x.data @ uw.T)

    def bw(g):
        return (np.matmul(uh.T, g) @ uw,)

    return _make(out, (x,), bw, "upsample_bilinear")
