"""Tape-based reverse-mode autodiff over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.gradient` walks that record backwards.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; every primitive whose inputs require gradients
    is recorded while the tape is active.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def gradient(self, loss: Tensor, params):
        """Gradients of a scalar ``loss`` with respect to each of ``params``.

        Parameters that never took part in the computation get zeros.
        """
        if loss.data.size != 1:
            raise ValueError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{node.name}: gradient shape {gi.shape} != input shape {t.shape}")
                k = id(t)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
        return [grads.get(id(p), np.zeros_like(p.data)).astype(p.dtype, copy=False) for p in params]


def grad_eval(fn, params):
    """Evaluate ``fn()`` under a fresh tape; return (loss, gradients)."""
    with Tape() as tape:
        loss = fn()
    return loss, tape.gradient(loss, params)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(name, inputs, out_data, backward) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    if req and _ACTIVE:
        _ACTIVE[-1].nodes.append(_Node(name, inputs, out, backward))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    # constants adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _binary_shape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    _binary_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _pair(a, b)
    _binary_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _pair(a, b)
    _binary_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = _pair(a, b)
    _binary_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def power(a, p: float):
    a = as_tensor(a)
    ad = a.data
    return _record("pow", (a,), ad ** p, lambda g: (g * p * ad ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _record("log", (a,), np.log(ad), lambda g: (g / ad,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", (a,), out, lambda g: (g * (1 - out * out),))


def _sigmoid(x):
    return expit(x)


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1 - out),))


def silu(a):
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return _record("silu", (a,), x * s, lambda g: (g * (s + x * s * (1 - s)),))


def absolute(a):
    a = as_tensor(a)
    ad = a.data
    return _record("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


def clip(a, lo, hi):
    a = as_tensor(a)
    ad = a.data
    mask = (ad >= lo) & (ad <= hi)
    return _record("clip", (a,), np.clip(ad, lo, hi), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    return _record("sum", (a,), out, back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    count = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).astype(a.dtype),)
    # reductions accumulate in float64 regardless of the tensor dtype
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    return _record("mean", (a,), out, back)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _record("transpose", (a,), np.transpose(a.data, axes),
                   lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)
    return _record("slice", (a,), a.data[idx], back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concat", tuple(tensors), out,
                   lambda g: tuple(np.split(g, sizes, axis=axis)))


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _record("broadcast", (a,), np.broadcast_to(a.data, shape).copy(),
                   lambda g: (_unbroadcast(g, old),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def affine(x, w, b=None):
    """x @ w + b with x (B, in), w (in, out), b (out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.shape} and {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is None:
        return _record("affine", (x, w), out, lambda g: (g @ wd.T, xd.T @ g))
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match output width {w.shape[1]}")
    return _record("affine", (x, w, b), out + b.data,
                   lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    """(B, C, H, W) -> (B, C*kh*kw, ho*wo), one strided slice copy per kernel offset."""
    B, C = xp.shape[:2]
    cols = np.empty((B, C, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(B, C * kh * kw, ho * wo)


def _im2col_s1(xp, kh, kw):
    """Stride-1 columns over the flattened image: (B, C*kh*kw, ho*Wp).

    Each kernel offset is one contiguous slice; the last kw-1 columns of every
    output row wrap around and are discarded by the caller.
    """
    B, C, Hp, Wp = xp.shape
    ho = Hp - kh + 1
    n = ho * Wp
    flat = np.zeros((B, C, Hp * Wp + kw - 1), dtype=xp.dtype)
    flat[:, :, :Hp * Wp] = xp.reshape(B, C, Hp * Wp)
    cols = np.empty((B, C, kh, kw, n), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * Wp + j
            cols[:, :, i, j] = flat[:, :, off:off + n]
    return cols.reshape(B, C * kh * kw, n)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation; x (B, C, H, W), w (O, C, kh, kw), b (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    O, C, kh, kw = w.shape
    xd, wd = x.data, w.data
    B = xd.shape[0]
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {w.shape[2:]} larger than padded input {xp.shape[2:]}")
    ho = (xp.shape[2] - kh) // sh + 1
    wo = (xp.shape[3] - kw) // sw + 1
    unit = sh == 1 and sw == 1
    wp = xp.shape[3] if unit else wo  # row length of the column layout
    cols = _im2col_s1(xp, kh, kw) if unit else _im2col(xp, kh, kw, sh, sw, ho, wo)
    wmat = wd.reshape(O, -1)
    out = np.matmul(wmat, cols).reshape(B, O, ho, wp)[..., :wo]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]

    def back(g):
        if unit:
            g3 = np.zeros((B, O, ho, wp), dtype=g.dtype)
            g3[..., :wo] = g
            g3 = g3.reshape(B, O, ho * wp)
        else:
            g3 = np.ascontiguousarray(g).reshape(B, O, ho * wo)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if unit:
            # the input gradient is a full correlation with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            wflip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
            gxp = np.matmul(wflip, _im2col_s1(gp, kh, kw))
            gxp = gxp.reshape(B, C, xp.shape[2], gp.shape[3])[..., :xp.shape[3]]
        else:
            gcols = np.matmul(wmat.T, g3).reshape(B, C, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += gcols[:, :, i, j]
        gx = gxp[:, :, ph:ph + xd.shape[2], pw:pw + xd.shape[3]]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _record("conv2d", inputs, out, back)


def upsample2d(x, factor=2):
    """Nearest-neighbour upsampling of the last two axes."""
    x = as_tensor(x)
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return _record("upsample2d", (x,), out,
                   lambda g: (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),))
