"""Differentiable operators.

Elementwise arithmetic follows numpy broadcasting; adjoints are summed back
to each operand's shape.  The heavier operators (convolution, batch
normalisation, pooling, log-softmax) are fused: they compute their adjoint
in closed form rather than through a chain of primitives.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatchError, DimensionError
from .tensor import Tensor, branch


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.data + b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.data - b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.data * b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return Tensor.from_op(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p
    return Tensor.from_op(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = branch(x.data > 0)
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,),
                          lambda g: (g * mask,), "relu")


def elementwise(x: Tensor, kind: str = "relu") -> Tensor:
    if kind != "relu":
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return relu(x)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    mask = branch(x.data > lo)
    return Tensor.from_op(np.where(mask, x.data, lo).astype(x.dtype), (x,),
                          lambda g: (g * mask,), "clamp_min")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}", axes=("a[-1]", "b[-2]"))
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), bw, "matmul")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return Tensor.from_op(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor.from_op(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor.from_op(np.array(out, copy=True), (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# fused layers


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w.T (+ b) for x of shape N x D and w of shape K x D."""
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"linear expects 2-D x and W, got {x.shape}, {w.shape}", axes=("x", "W"))
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"linear: x has D={x.shape[1]} but W has D={w.shape[1]}", axes=("x[1]", "W[1]"))
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias shape {b.shape} != ({w.shape[0]},)", axes=("b[0]",))
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data
        gw = g.T @ x.data
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, bw, "linear")


def _conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of N x C x H x W input with F x C x kh x kw kernels."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D x and w, got {x.shape}, {w.shape}", axes=("x", "w"))
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv2d: input has C={c} but kernel has C={cw}", axes=("x[1]", "w[1]"))
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d: bad stride={stride} / pad={pad}", axes=("stride", "pad"))
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}",
            axes=("x[2]", "x[3]"))
    if b is not None and b.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({f},)", axes=("b[0]",))
    ho, wo = _conv_out_size(h, kh, stride, pad), _conv_out_size(wd, kw, stride, pad)

    if kh == 1 and kw == 1 and pad == 0:
        xs = x.data[:, :, ::stride, ::stride][:, :, :ho, :wo]
        w2 = w.data.reshape(f, c)
        out = np.matmul(w2, xs.reshape(n, c, ho * wo)).reshape(n, f, ho, wo)

        def bw(g):
            g2 = g.reshape(n, f, ho * wo)
            gw = np.einsum("nfp,ncp->fc", g2, xs.reshape(n, c, ho * wo)).reshape(w.shape)
            gxs = np.matmul(w2.T, g2).reshape(n, c, ho, wo)
            if stride == 1:
                gx = gxs
            else:
                gx = np.zeros_like(x.data)
                gx[:, :, ::stride, ::stride][:, :, :ho, :wo] = gxs
            grads = (gx, gw)
            return grads if b is None else grads + (g.sum(axis=(0, 2, 3)),)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # N,C,Ho,Wo,kh,kw
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
        w2 = w.data.reshape(f, c * kh * kw)
        out = (cols @ w2.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

        def bw(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
            gw = (g2.T @ cols).reshape(w.shape)
            gcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
            grads = (gx, gw)
            return grads if b is None else grads + (g.sum(axis=(0, 2, 3)),)

    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data.reshape(1, f, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, bw, "conv2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, mode: str = "train", eps: float = 1e-5,
               momentum: float = 0.1) -> Tensor:
    """Per-channel normalisation of an N x C or N x C x H x W tensor.

    In ``train`` mode the batch statistics are used and the running buffers
    are updated in place (running variance uses the unbiased estimate).
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm expects N x C or N x C x H x W, got {x.shape}", axes=("x",))
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine shape mismatch for C={c}", axes=("gamma", "beta"))
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise DimensionError(f"batch_norm: running stats shape mismatch for C={c}", axes=("running",))
    if eps < 0:
        raise ValueError("batch_norm eps must be nonnegative")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    g_ = gamma.data.reshape(bshape)

    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError(f"batch_norm in train mode needs N >= 2, got N={x.shape[0]}")
        m = x.data.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = g_ * xhat + beta.data.reshape(bshape)
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c) * (m / (m - 1))

        def bw(g):
            gbeta = g.sum(axis=axes)
            ggamma = (g * xhat).sum(axis=axes)
            dxhat = g * g_
            gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, ggamma, gbeta
    elif mode == "infer":
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv
        out = g_ * xhat + beta.data.reshape(bshape)

        def bw(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "batch_norm")


def pool2d(x: Tensor, window, mode: str = "avg") -> Tensor:
    """Non-overlapping average or max pooling with a (wh, ww) window."""
    if x.ndim != 4:
        raise DimensionError(f"pool2d expects N x C x H x W, got {x.shape}", axes=("x",))
    wh, ww = window
    n, c, h, w = x.shape
    if wh < 1 or ww < 1 or h % wh or w % ww:
        raise DimensionError(f"pool2d: window {wh}x{ww} does not tile {h}x{w}", axes=("x[2]", "x[3]"))
    ho, wo = h // wh, w // ww
    blocks = x.data.reshape(n, c, ho, wh, wo, ww)
    if mode == "avg":
        out = blocks.mean(axis=(3, 5))
        scale = 1.0 / (wh * ww)

        def bw(g):
            gb = np.broadcast_to((g * scale)[:, :, :, None, :, None], blocks.shape)
            return (gb.reshape(x.shape).astype(x.dtype),)
    elif mode == "max":
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, wh * ww)
        idx = branch(flat.argmax(axis=-1))
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def bw(g):
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
            gx = gflat.reshape(n, c, ho, wo, wh, ww).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
            return (gx,)
    else:
        raise ValueError(f"pool mode must be 'avg' or 'max', got {mode!r}")
    return Tensor.from_op(np.ascontiguousarray(out), (x,), bw, "pool2d")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out, (x,), bw, "log_softmax")


def log1p_sum_exp(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log(1 + sum_j mask_ij * exp(x_ij)); an empty row gives 0."""
    mask = np.asarray(mask, dtype=bool)
    masked = np.where(mask, x.data, -np.inf)
    m = np.maximum(masked.max(axis=1, initial=-np.inf), 0.0)
    terms = np.where(mask, np.exp(masked - m[:, None]), 0.0)
    out = m + np.log(np.exp(-m) + terms.sum(axis=1))

    def bw(g):
        w = np.where(mask, np.exp(masked - out[:, None]), 0.0)
        return ((g[:, None] * w).astype(x.dtype),)

    return Tensor.from_op(out.astype(x.dtype), (x,), bw, "log1p_sum_exp")


def l2_normalize(x: Tensor, axis: int = 1, eps: float = 1e-12) -> Tensor:
    norm = sqrt(clamp_min(sum(mul(x, x), axis=axis, keepdims=True), eps * eps))
    return div(x, norm)


# ---------------------------------------------------------------------------
# operator overloads

Tensor.__add__ = lambda a, b: add(a, b)
Tensor.__radd__ = lambda a, b: add(b, a)
Tensor.__sub__ = lambda a, b: sub(a, b)
Tensor.__rsub__ = lambda a, b: sub(b, a)
Tensor.__mul__ = lambda a, b: mul(a, b)
Tensor.__rmul__ = lambda a, b: mul(b, a)
Tensor.__truediv__ = lambda a, b: div(a, b)
Tensor.__rtruediv__ = lambda a, b: div(b, a)
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
Tensor.__pow__ = power
Tensor.__getitem__ = getitem
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)
Tensor.T = property(lambda self: transpose(self))
Tensor.exp = exp
Tensor.log = log
Tensor.relu = relu
