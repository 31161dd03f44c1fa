"""Primitive differentiable ops over :class:`Tensor`.

Every op computes its forward value with numpy and records a closure that
maps the output gradient to input gradients. Feature maps are N x C x H x W.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import InvalidArgument, NumericDomainError, Tensor, record


def _check_same_dtype(*ts: Tensor) -> None:
    dts = {t.dtype for t in ts}
    if len(dts) > 1:
        raise InvalidArgument(f"mixed dtypes {sorted(map(str, dts))}")


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_pattern(a: Tensor, b: Tensor) -> None:
    """Allow equal shapes, or a 4-D operand broadcast along C or along H,W."""
    if a.shape == b.shape:
        return
    if a.ndim == 4 and b.ndim == 4:
        big, small = (a, b) if a.size >= b.size else (b, a)
        n, c, h, w = big.shape
        if small.shape in ((n, c, 1, 1), (n, 1, h, w)):
            return
    raise InvalidArgument(f"incompatible broadcast {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pattern(a, b)
    _check_same_dtype(a, b)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pattern(a, b)
    _check_same_dtype(a, b)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_pattern(a, b)
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with numpy trailing-axis broadcasting of ``b`` (biases, attention offsets)."""
    _check_same_dtype(x, b)
    try:
        out_shape = np.broadcast_shapes(x.shape, b.shape)
    except ValueError as e:
        raise InvalidArgument(str(e)) from None
    if out_shape != x.shape:
        raise InvalidArgument(f"bias {b.shape} does not broadcast into {x.shape}")
    sb = b.shape
    return record("add_bias", (x, b), x.data + b.data, lambda g: (g, _unbroadcast(g, sb)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return record("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype, copy=False),
                  lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation."""
    d = x.data
    u = _GELU_C * (d + 0.044715 * d ** 3)
    t = np.tanh(u)
    y = 0.5 * d * (1 + t)

    def vjp(g):
        du = _GELU_C * (1 + 3 * 0.044715 * d ** 2)
        return (g * (0.5 * (1 + t) + 0.5 * d * (1 - t * t) * du),)

    return record("gelu", (x,), y, vjp)


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    unary = {"sigmoid": sigmoid, "relu": relu, "gelu": gelu}
    binary = {"add": add, "mul": mul}
    if kind in unary:
        return unary[kind](a)
    if kind in binary:
        if b is None:
            raise InvalidArgument(f"{kind} needs two operands")
        return binary[kind](a, b)
    raise InvalidArgument(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return scale(sum_all(x), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                  lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return record("roll", (x,), np.roll(x.data, shifts, axes),
                  lambda g: (np.roll(g, back, axes),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = tuple(xs)
    _check_same_dtype(*xs)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return record("concat", xs, np.concatenate([t.data for t in xs], axis=axis),
                  lambda g: tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis)))


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``table[index]``; backward scatter-adds."""
    index = np.asarray(index)
    rows = table.shape[0]

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index.reshape(-1), g.reshape(index.size, *table.shape[1:]))
        return (out,)

    if index.min() < 0 or index.max() >= rows:
        raise InvalidArgument("gather index out of range")
    return record("take", (table,), table.data[index], vjp)


# ---------------------------------------------------------------------------
# pooling


def global_max_pool_spatial(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise InvalidArgument(f"expected N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def vjp(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(n, c, h, w),)

    return record("gmp", (x,), out, vjp)


def channel_max_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise InvalidArgument(f"expected N x C x H x W, got {x.shape}")
    idx = x.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return record("cgmp", (x,), out, vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product over equal leading dims: ...xMxK @ ...xKxP."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise InvalidArgument(f"matmul shape mismatch {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return record("matmul", (a, b), ad @ bd, vjp)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x (... x K) @ w (K x P) + b (P)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise InvalidArgument(f"linear shape mismatch {x.shape} @ {w.shape}")
    _check_same_dtype(x, w)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    wd = w.data
    out = x2 @ wd
    if b is not None:
        if b.shape != (w.shape[1],):
            raise InvalidArgument(f"bias shape {b.shape} != ({w.shape[1]},)")
        out = out + b.data
    out = out.reshape(*lead, w.shape[1])

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(*lead, wd.shape[0])
        gw = x2.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", inputs, out, vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    if np.isnan(x.data).any():
        raise NumericDomainError("softmax input contains NaN")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), y, vjp)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise InvalidArgument(f"layer_norm affine shape mismatch for last dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data
    out = xhat * gd + beta.data

    def vjp(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gh = g * gd
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (gx, ggamma, gbeta)

    return record("layer_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), vjp)


def batch_norm(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               gamma: Tensor, beta: Tensor, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the batch statistics are used and the running arrays
    are updated in place (unbiased variance for the running estimate).
    """
    if x.ndim != 4:
        raise InvalidArgument(f"expected N x C x H x W, got {x.shape}")
    c = x.shape[1]
    for a in (running_mean, running_var, gamma.data, beta.data):
        if a.shape != (c,):
            raise InvalidArgument(f"batch_norm stats shape {a.shape} != ({c},)")
    xd = x.data
    gd = gamma.data.reshape(1, c, 1, 1)
    if not training:
        mu = running_mean.reshape(1, c, 1, 1)
        rstd = 1.0 / np.sqrt(running_var.reshape(1, c, 1, 1) + eps)
        out = (xd - mu) * rstd * gd + beta.data.reshape(1, c, 1, 1)
        xhat = (xd - mu) * rstd

        def vjp_eval(g):
            return (g * rstd * gd, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

        return record("batch_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), vjp_eval)

    m = xd.shape[0] * xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=(0, 2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)
    running_mean *= 1 - momentum
    running_mean += momentum * mu.reshape(c)
    unbiased = var.reshape(c) * (m / max(m - 1, 1))
    running_var *= 1 - momentum
    running_var += momentum * unbiased

    def vjp(g):
        gh = g * gd
        gx = rstd * (gh - gh.mean(axis=(0, 2, 3), keepdims=True)
                     - xhat * (gh * xhat).mean(axis=(0, 2, 3), keepdims=True))
        return (gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

    return record("batch_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), vjp)


def batch_norm_infer(x: Tensor, mean: Tensor, var: Tensor, gamma: Tensor, beta: Tensor,
                     eps: float = 1e-5) -> Tensor:
    """Inference-mode batch norm with supplied statistics."""
    return batch_norm(x, np.array(mean.data), np.array(var.data), gamma, beta,
                      training=False, eps=eps)


# ---------------------------------------------------------------------------
# convolution and resampling


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of N x Cin x H x W with Cout x Cin x k x k."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3]:
        raise InvalidArgument(f"conv2d shape mismatch x={x.shape} w={w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise InvalidArgument(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")
    if stride < 1 or pad < 0:
        raise InvalidArgument("stride must be >= 1 and pad >= 0")
    _check_same_dtype(x, w)
    n, cin, h, wd_ = x.shape
    cout, _, k, _ = w.shape
    hp, wp = h + 2 * pad, wd_ + 2 * pad
    if hp < k or wp < k:
        raise InvalidArgument(f"kernel {k} larger than padded input {hp}x{wp}")
    if (hp - k) % stride or (wp - k) % stride:
        raise InvalidArgument(f"non-exact conv output size for H={h}, W={wd_}, k={k}, "
                              f"stride={stride}, pad={pad}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    wdat = w.data

    if k == 1 and stride == 1 and pad == 0:
        xd = x.data
        out = np.einsum("oc,nchw->nohw", wdat[:, :, 0, 0], xd, optimize=True)
        if b is not None:
            out = out + b.data.reshape(1, cout, 1, 1)

        def vjp1(g):
            gx = np.einsum("oc,nohw->nchw", wdat[:, :, 0, 0], g, optimize=True)
            gw = np.einsum("nohw,nchw->oc", g, xd, optimize=True).reshape(wdat.shape)
            out_ = (gx, gw)
            return out_ if b is None else out_ + (g.sum(axis=(0, 2, 3)),)

        inputs = (x, w) if b is None else (x, w, b)
        return record("conv2d", inputs, np.ascontiguousarray(out), vjp1)

    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # cols: n x ho x wo x cin x k x k (copied into contiguous im2col buffer)
    win = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * k * k)
    wmat = wdat.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(wdat.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, cin, k, k)
        gpad = np.zeros((n, cin, hp, wp), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gpad[:, :, pad:pad + h, pad:pad + wd_] if pad else gpad
        res = (np.ascontiguousarray(gx), gw)
        return res if b is None else res + (g2.sum(axis=0),)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", inputs, out, vjp)


def resize_matrix(src: int, dst: int) -> np.ndarray:
    """Half-pixel bilinear weights (dst x src): s = (d + 0.5) * src/dst - 0.5, clamped."""
    m = np.zeros((dst, src), dtype=np.float64)
    for d in range(dst):
        s = min(max((d + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, src - 1)
        t = s - i0
        m[d, i0] += 1.0 - t
        m[d, i1] += t
    return m


@lru_cache(maxsize=64)
def _interp_matrix(size: int, factor: int, dtype_name: str) -> np.ndarray:
    m = resize_matrix(size, factor * size).astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if not isinstance(factor, (int, np.integer)) or factor < 2:
        raise InvalidArgument(f"upsample factor must be an integer >= 2, got {factor}")
    if x.ndim != 4:
        raise InvalidArgument(f"expected N x C x H x W, got {x.shape}")
    _, _, h, w = x.shape
    ah = _interp_matrix(h, int(factor), x.dtype.name)
    aw = _interp_matrix(w, int(factor), x.dtype.name)
    # rows then columns; each a plain matmul against a fixed matrix
    out = np.matmul(ah, x.data) @ aw.T

    def vjp(g):
        return (np.matmul(ah.T, g) @ aw,)

    return record("upsample", (x,), np.ascontiguousarray(out), vjp)


# ---------------------------------------------------------------------------
# loss


def bce_with_logits(logits: Tensor, mask: Tensor) -> Tensor:
    """Binary cross-entropy in logit form: sum over pixels, mean over batch."""
    if logits.shape != mask.shape:
        raise InvalidArgument(f"logits {logits.shape} vs mask {mask.shape}")
    y = mask.data
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgument("mask must be binary {0,1}")
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise NumericDomainError("non-finite logits")
    n = x.shape[0] if x.ndim > 0 else 1
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = np.asarray(per.sum() / n, dtype=x.dtype)

    def vjp(g):
        e = np.exp(-np.abs(x))
        sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((sig - y) * (g / n), None)

    return record("bce", (logits, mask), loss, vjp)


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; backward writes the gradient into a zero array."""
    out = np.ascontiguousarray(x.data[key])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return record("getitem", (x,), out, vjp)


def mul_const(x: Tensor, values: np.ndarray) -> Tensor:
    """Elementwise product with a fixed array (no gradient to ``values``)."""
    return record("mul_const", (x,), x.data * values, lambda g: (_unbroadcast(g * values, x.shape),))
