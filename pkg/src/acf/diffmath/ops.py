"""Differentiable primitives over :class:`~acf.diffmath.tensor.Tensor`."""
from __future__ import annotations

import builtins

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _coerce(a, b):
    a, b = as_tensor(a), as_tensor(b)
    # bare python scalars follow the tensor operand's dtype
    if not a.requires_grad and a.ndim == 0 and b.data.dtype != a.data.dtype:
        a = Tensor(a.data.astype(b.data.dtype))
    if not b.requires_grad and b.ndim == 0 and a.data.dtype != b.data.dtype:
        b = Tensor(b.data.astype(a.data.dtype))
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_node(x ** exponent, (a,),
                     lambda g: (g * exponent * x ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_node(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow free for both signs
    return 0.5 * (1 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    out = x * s
    return make_node(out, (a,), lambda g: (g * (s + out * (1 - s)),))


def log_sigmoid(a) -> Tensor:
    """``log(sigmoid(x))`` evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    out = -np.logaddexp(0, -x)
    return make_node(out, (a,), lambda g: (g * _sigmoid(-x),))


def stop_gradient(a) -> Tensor:
    """Same value, no recorded edge."""
    a = as_tensor(a)
    return Tensor(a.data)


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand(g, shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return make_node(np.asarray(out), (a,), lambda g: (_expand(g, shape, axes, keepdims),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return make_node(np.asarray(out), (a,),
                     lambda g: (_expand(g / count, shape, axes, keepdims),))


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return make_node(out, (a,), vjp)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return make_node(out, (a,),
                     lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return make_node(out, (a,),
                     lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch shapes of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if ad.ndim > 2 and bd.ndim == 2:
                # fold batch axes into one tall matrix
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_node(ad @ bd, (a, b), vjp)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or builtins.any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return make_node(out, ts, lambda g: tuple(np.split(g, splits, axis=ax)))


def index(a, idx) -> Tensor:
    """Basic/advanced indexing ``a[idx]``."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(a.data[idx], (a,), vjp)


def gather(a, indices, axis=-1) -> Tensor:
    """``take_along_axis``: pick one entry per position along ``axis``."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    if indices.ndim != a.ndim:
        raise ShapeError(f"gather: index rank {indices.shape} must match tensor rank {a.shape}")
    shape, dtype = a.shape, a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        # add.at accumulates repeated indices, put_along_axis would not
        idx = list(np.indices(indices.shape, sparse=True))
        idx[axis % len(shape)] = indices
        np.add.at(full, tuple(idx), g)
        return (full,)

    return make_node(np.take_along_axis(a.data, indices, axis=axis), (a,), vjp)


# ---------------------------------------------------------------- fused layers

def rms_norm(a, gain, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis by its root mean square, then scale by ``gain``."""
    a, gain = as_tensor(a), as_tensor(gain)
    if gain.shape != a.shape[-1:]:
        raise ShapeError(f"rms_norm: gain {gain.shape} does not match features of {a.shape}")
    x, w = a.data, gain.data
    r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    xhat = x * r

    def vjp(g):
        ga = gw = None
        if a.requires_grad:
            u = g * w
            ga = r * (u - xhat * (u * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gw = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
        return ga, gw

    return make_node(xhat * w, (a, gain), vjp)


def _patch_slices(h, w, k, stride):
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, slice(dy, dy + stride * (ho - 1) + 1, stride), \
                slice(dx, dx + stride * (wo - 1) + 1, stride)


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution over NHWC input with a (k, k, C_in, C_out) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[2] != x.shape[3] \
            or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    k, _, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    hp, wp = xd.shape[1], xd.shape[2]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    slices = list(_patch_slices(hp, wp, k, stride))
    cols = np.empty((n, ho, wo, k * k, cin), dtype=xd.dtype)
    for p, (_, _, sy, sx) in enumerate(slices):
        cols[:, :, :, p, :] = xd[:, sy, sx, :]
    cols = cols.reshape(n * ho * wo, k * k * cin)
    wmat = kernel.data.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, k * k, cin)
            gpad = np.zeros((n, hp, wp, cin), dtype=xd.dtype)
            for p, (_, _, sy, sx) in enumerate(slices):
                gpad[:, sy, sx, :] += gcols[:, :, :, p, :]
            gx = gpad[:, padding:padding + h, padding:padding + w, :] if padding else gpad
        if kernel.requires_grad:
            gk = (cols.T @ g2).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    return make_node(out, parents, vjp)


# activations larger than this are recomputed on the backward pass instead of kept
PAIRWISE_CACHE_BYTES = 256 * 2**20


def pairwise_silu_linear(rows, cols, weight, bias=None, chunk: int = 4) -> Tensor:
    """``out[i, j] = silu(rows[i] + cols[j]) @ weight + bias`` for all pairs.

    ``rows`` and ``cols`` are (B, H) and (C, H); the result is (B, C, A). The
    (B, C, H) hidden activations are built in row blocks; they are kept for the
    backward pass when they fit in ``PAIRWISE_CACHE_BYTES`` and recomputed
    block by block otherwise.
    """
    rows, cols, weight = as_tensor(rows), as_tensor(cols), as_tensor(weight)
    if rows.ndim != 2 or cols.ndim != 2 or rows.shape[1] != cols.shape[1] \
            or weight.ndim != 2 or weight.shape[0] != rows.shape[1]:
        raise ShapeError(f"pairwise_silu_linear: rows {rows.shape}, cols {cols.shape}, "
                         f"weight {weight.shape} are incompatible")
    r, c, w = rows.data, cols.data, weight.data
    b_, c_ = r.shape[0], c.shape[0]
    n_hid, n_out = w.shape
    dtype = np.result_type(r, c, w)
    out = np.empty((b_, c_, n_out), dtype=dtype)
    tracked = rows.requires_grad or cols.requires_grad or weight.requires_grad
    keep = tracked and 2 * b_ * c_ * n_hid * dtype.itemsize <= PAIRWISE_CACHE_BYTES
    sig = np.empty((b_, c_, n_hid), dtype) if keep else None
    act = np.empty((b_, c_, n_hid), dtype) if keep else None

    def block(i0):
        """Sigmoid and silu of the hidden units for rows ``i0:i0+chunk``."""
        hid = r[i0:i0 + chunk, None, :] + c[None, :, :]
        s = np.negative(hid)
        np.exp(s, out=s)
        s += 1
        np.reciprocal(s, out=s)
        hid *= s
        return s, hid

    for i0 in range(0, b_, chunk):
        s, y = block(i0)
        if keep:
            sig[i0:i0 + chunk], act[i0:i0 + chunk] = s, y
        np.matmul(y, w, out=out[i0:i0 + chunk])
    parents = [rows, cols, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        parents.append(bias)

    def vjp(g):
        gr = np.empty_like(r)
        gc = np.zeros_like(c)
        gw = np.zeros_like(w)
        wt = w.T
        for i0 in range(0, b_, chunk):
            if keep:
                s, y = sig[i0:i0 + chunk], act[i0:i0 + chunk]
            else:
                s, y = block(i0)
            gblk = g[i0:i0 + chunk]
            gw += y.reshape(-1, n_hid).T @ gblk.reshape(-1, n_out)
            gy = gblk @ wt
            # silu'(h) = s + y (1 - s) = s + y - y s
            d = y * s
            np.subtract(y, d, out=d)
            d += s
            gy *= d
            gr[i0:i0 + chunk] = gy.sum(axis=1)
            gc += gy.sum(axis=0)
        res = [gr, gc, gw]
        if bias is not None:
            res.append(g.reshape(-1, n_out).sum(axis=0))
        return tuple(res)

    return make_node(out, parents, vjp)
