"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects. Array-valued
operands may carry a leading batch axis; the per-sample forms documented for
``affine`` and ``conv2d`` are accepted too and are promoted internally.
"""

from __future__ import annotations

import contextlib

import numpy as np

from camnet.engine.tensor import Tensor, as_tensor
from camnet.errors import DimensionError

CE_EPS = 1e-12

_grad_enabled = {"on": True}


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    old = _grad_enabled["on"]
    _grad_enabled["on"] = False
    try:
        yield
    finally:
        _grad_enabled["on"] = old


def _result(data, parents, backward_fn, op):
    parents = [p for p in parents]
    if _grad_enabled["on"] and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=parents, _op=op)
        out._backward = backward_fn
        return out
    return Tensor(data, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _operand(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    a_shape, b_shape = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _operand(a, b)
    b = _operand(b, a)
    a_shape, b_shape = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), bw, "mul")


def add_n(tensors) -> Tensor:
    """Sum a list of same-shaped tensors, left to right."""
    tensors = list(tensors)
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total = total + t.data

    def bw(g):
        return [g] * len(tensors)

    return _result(total, tensors, bw, "add_n")


# ----------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), bw, "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), bw, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, bounds, axis=axis)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def split(x: Tensor, parts: int, axis: int = 1) -> list:
    """Split into ``parts`` equal chunks along ``axis``."""
    step = x.shape[axis] // parts
    out = []
    for k in range(parts):
        index = [slice(None)] * x.ndim
        index[axis] = slice(k * step, (k + 1) * step)
        out.append(getitem_slices(x, tuple(index)))
    return out


def getitem_slices(x: Tensor, index: tuple) -> Tensor:
    """Basic-slice indexing; cheaper backward than the fancy-index path."""
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), bw, "slice")


# ----------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum()), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size

    def bw(g):
        return (np.full(shape, g / n, dtype=g.dtype),)

    return _result(np.asarray(x.data.mean()), (x,), bw, "mean")


# ----------------------------------------------------------------- dense

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """out[..., k] = sum_q w[k, q] * x[..., q] + b[k]."""
    if w.ndim != 2 or b.ndim != 1 or x.ndim < 1:
        raise DimensionError(f"affine expects x[...,in], w[out,in], b[out]; got x{x.shape}, w{w.shape}, b{b.shape}")
    if x.shape[-1] != w.shape[1] or b.shape[0] != w.shape[0]:
        raise DimensionError(f"affine shape mismatch: x{x.shape} vs w{w.shape} vs b{b.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T + b.data

    def bw(g):
        gx = g @ wd if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1]) if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _result(out, (x, w, b), bw, "affine")


# ----------------------------------------------------------------- convolution

def same_padding(extent: int, kernel: int, stride: int) -> tuple:
    """(before, after) padding so the output extent is ceil(extent / stride)."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def _pad_amounts(h, w, kh, kw, stride, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    raise DimensionError(f"unknown padding {padding!r}")


def _im2col(xp, kh, kw, stride, ho, wo):
    """(B, C, Hp, Wp) -> (B, C*kh*kw, Ho*Wo) patch matrices, channel-major."""
    bsz, c = xp.shape[:2]
    cols = np.empty((bsz, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols.reshape(bsz, c * kh * kw, ho * wo)


def _input_grad(g, kd, stride, hp, wp):
    """Adjoint of the strided valid correlation: full correlation of the
    zero-dilated output gradient with the flipped, channel-swapped kernel."""
    bsz, cout, ho, wo = g.shape
    _, cin, kh, kw = kd.shape
    if stride > 1:
        gd = np.zeros((bsz, cout, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype)
        gd[:, :, ::stride, ::stride] = g
    else:
        gd = g
    extra_h = hp - (gd.shape[2] + kh - 1)
    extra_w = wp - (gd.shape[3] + kw - 1)
    gp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1 + extra_h), (kw - 1, kw - 1 + extra_w)))
    kf = np.ascontiguousarray(kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(cin, -1)
    cols = _im2col(gp, kh, kw, 1, hp, wp)
    return np.matmul(kf, cols).reshape(bsz, cin, hp, wp)


def conv2d(x: Tensor, k: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of x[(B,)C,H,W] with k[Cout,Cin,kh,kw] plus per-channel bias."""
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or k.ndim != 4 or b.ndim != 1:
        raise DimensionError(f"conv2d expects x[C,H,W] or x[B,C,H,W], k[Cout,Cin,kh,kw], b[Cout]; "
                             f"got x{x.shape}, k{k.shape}, b{b.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d stride must be >= 1, got {stride}")
    bsz, cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin or b.shape[0] != cout:
        raise DimensionError(f"conv2d channel mismatch: x{x.shape} vs k{k.shape} vs b{b.shape}")
    (pt, pb), (pl, pr) = _pad_amounts(h, w, kh, kw, stride, padding)
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d kernel {k.shape[2:]} larger than padded input {(hp, wp)}")
    xd = x.data
    if pt or pb or pl or pr:
        xd = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    kd = k.data
    pointwise = kh == 1 and kw == 1 and stride == 1
    if pointwise:
        cols = xd.reshape(bsz, cin, ho * wo)
    else:
        cols = _im2col(xd, kh, kw, stride, ho, wo)
    kmat = kd.reshape(cout, -1)
    out = np.matmul(kmat, cols)
    out += b.data[:, None]
    out = out.reshape(bsz, cout, ho, wo)

    def bw(g):
        g3 = g.reshape(bsz, cout, ho * wo)
        gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kd.shape) if k.requires_grad else None
        gb = g3.sum(axis=(0, 2)) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            if pointwise:
                gx = np.matmul(kmat.T, g3).reshape(bsz, cin, hp, wp)
            else:
                gx = _input_grad(g, kd, stride, hp, wp)
            if pt or pb or pl or pr:
                gx = np.ascontiguousarray(gx[:, :, pt:pt + h, pl:pl + w])
        return gx, gk, gb

    res = _result(out, (x, k, b), bw, "conv2d")
    if unbatched:
        res = reshape(res, res.shape[1:])
    return res


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes; trailing rows/cols that
    do not fill a window are dropped."""
    *lead, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise DimensionError(f"max_pool2d window {size} larger than input {(h, w)}")
    crop = x.data[..., :ho * size, :wo * size]
    blocks = crop.reshape(*lead, ho, size, wo, size)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gblocks = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gblocks = gblocks.reshape(*lead, ho, wo, size, size)
        gblocks = np.moveaxis(gblocks, -2, -3).reshape(*lead, ho * size, wo * size)
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., :ho * size, :wo * size] = gblocks
        return (full,)

    return _result(out, (x,), bw, "max_pool2d")


def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes."""
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    *lead, h, w = x.shape

    def bw(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return _result(out, (x,), bw, "upsample2d")


# ----------------------------------------------------------------- activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), bw, "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), bw, "tanh")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the final axis, stabilised by subtracting the slice max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax":
        return softmax(x)
    if kind in ("none", None):
        return x
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------- losses

def _check_same(pred, target, name):
    if pred.shape != target.shape:
        raise DimensionError(f"{name}: prediction shape {pred.shape} != target shape {target.shape}")


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element."""
    target = _operand(target, pred)
    _check_same(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gd = g * (2.0 / n) * diff
        return gd, (-gd if target.requires_grad else None)

    return _result(np.asarray((diff * diff).mean()), (pred, target), bw, "mse")


def cross_entropy(pred: Tensor, target) -> Tensor:
    """-sum(target * log(pred + eps)) per row, averaged over rows.

    ``pred`` holds probabilities (post-softmax) along the final axis.
    """
    target = _operand(target, pred)
    _check_same(pred, target, "cross_entropy")
    p, t = pred.data, target.data
    rows = max(p.size // p.shape[-1], 1) if p.ndim > 0 else 1
    logp = np.log(p + CE_EPS)
    value = -(t * logp).sum() / rows

    def bw(g):
        gp = -g * t / (p + CE_EPS) / rows
        gt = (-g * logp / rows) if target.requires_grad else None
        return gp, gt

    return _result(np.asarray(value), (pred, target), bw, "cross_entropy")


def loss(pred: Tensor, target, kind: str) -> Tensor:
    if kind == "mse":
        return mse(pred, target)
    if kind == "cross_entropy":
        return cross_entropy(pred, target)
    raise ValueError(f"unknown loss {kind!r}")
