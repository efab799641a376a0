"""Differentiable kernels over :class:`~prlsod.tensor.Tensor`.

Spatial feature maps use ``(H, W, C)`` layout. Every kernel is pure; the
backward closure captures whatever forward intermediates it needs.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import erf

from .tensor import Tensor, _unbroadcast, as_tensor


class ShapeError(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(a.ndim >= 2 and b.ndim >= 2, f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    _check(a.shape[-1] == b.shape[-2], f"matmul inner dims differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ g
        return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

    return Tensor._from_op(A @ B, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``; weight is ``(k, n)``."""
    _check(weight.ndim == 2 and x.shape[-1] == weight.shape[0], f"linear: {x.shape} vs weight {weight.shape}")
    lead = x.shape[:-1]
    k, n = weight.shape
    X = x.data.reshape(-1, k)
    W = weight.data
    out = X @ W
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ W.T).reshape(x.shape)
        gw = X.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out.reshape(*lead, n), parents, bw, "linear")


pwconv = linear  # a 1x1 convolution on an (H, W, C) map is a per-pixel linear map


# -- normalisation and attention ---------------------------------------------


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax. ``mask`` (broadcastable, True = keep) zeroes excluded entries."""
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    _check(bool(np.all(np.isfinite(m))), "softmax: a row has every entry masked")
    e = np.exp(z - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), bw, "softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1]
    _check(c >= 1 and gamma.shape == (c,) and beta.shape == (c,), f"layernorm: {x.shape}, gamma {gamma.shape}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gamma.data

    def bw(g):
        gxhat = g * G
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, c)
        return gx, (flat_g * xhat.reshape(-1, c)).sum(axis=0), flat_g.sum(axis=0)

    return Tensor._from_op(xhat * G + beta.data, (x, gamma, beta), bw, "layernorm")


# -- pointwise ---------------------------------------------------------------


def _unary(x: Tensor, out: np.ndarray, dydx: np.ndarray, op: str) -> Tensor:
    return Tensor._from_op(out, (x,), lambda g: (g * dydx,), op)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _unary(x, y, 1.0 - y * y, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _unary(x, y, y * (1.0 - y), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0.0), mask.astype(x.data.dtype), "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    X = x.data
    cdf = 0.5 * (1.0 + erf(X / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * X * X) / math.sqrt(2.0 * math.pi)
    return _unary(x, X * cdf, cdf + X * pdf, "gelu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _unary(x, y, y, "exp")


def square(x: Tensor) -> Tensor:
    return _unary(x, x.data * x.data, 2.0 * x.data, "square")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _unary(x, y, 0.5 / y, "sqrt")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), inside.astype(x.data.dtype), "clip")


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the zero vector is taken as 0."""
    X = x.data
    n = np.sqrt((X * X).sum(axis=axis))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        return (np.expand_dims(g / safe * (n > 0), axis) * X,)

    return Tensor._from_op(n, (x,), bw, "norm")


def acos_sq(c: Tensor) -> Tensor:
    """``arccos(clip(c, -1, 1))**2``.

    The derivative ``-2 acos(c)/sqrt(1-c^2)`` takes its limit ``-2`` at ``c = 1``;
    at and beyond ``-1`` (and beyond ``1``) the clamp makes it 0.
    """
    C = np.clip(c.data, -1.0, 1.0)
    ang = np.arccos(C)
    interior = (c.data > -1.0) & (c.data < 1.0)
    denom = np.sqrt(np.where(interior, 1.0 - C * C, 1.0))
    d = np.where(interior, -2.0 * ang / denom, 0.0)
    d = np.where(c.data == 1.0, -2.0, d)
    return _unary(c, ang * ang, d, "acos_sq")


# -- structural ----------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        _check(
            t.ndim == tensors[0].ndim
            and all(a == b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax),
            f"concat: incompatible shapes {[t.shape for t in tensors]}",
        )
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def roll2d(x: Tensor, shift: tuple[int, int]) -> Tensor:
    """Cyclic shift of an (H, W, ...) map along its first two axes."""
    dy, dx = shift
    return Tensor._from_op(
        np.roll(x.data, (dy, dx), axis=(0, 1)),
        (x,),
        lambda g: (np.roll(g, (-dy, -dx), axis=(0, 1)),),
        "roll2d",
    )


# -- convolution -------------------------------------------------------------


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, zero-padded 3x3 convolution. ``weight`` is ``(3, 3, Cin, Cout)``."""
    _check(x.ndim == 3, f"conv3x3 expects (H, W, C), got {x.shape}")
    H, W, cin = x.shape
    _check(weight.shape[:3] == (3, 3, cin), f"conv3x3 weight {weight.shape} vs input channels {cin}")
    cout = weight.shape[3]
    padded = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = np.stack([padded[i : i + H, j : j + W] for i in range(3) for j in range(3)], axis=2)
    cols = cols.reshape(H * W, 9 * cin)
    Wm = weight.data.reshape(9 * cin, cout)
    out = cols @ Wm
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(H * W, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        gcols = (g2 @ Wm.T).reshape(H, W, 9, cin)
        gpad = np.zeros((H + 2, W + 2, cin), dtype=g.dtype)
        k = 0
        for i in range(3):
            for j in range(3):
                gpad[i : i + H, j : j + W] += gcols[:, :, k]
                k += 1
        gx = gpad[1:-1, 1:-1]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out.reshape(H, W, cout), parents, bw, "conv3x3")


# -- resampling --------------------------------------------------------------


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _check(x.ndim >= 2 and factor >= 1, f"upsample_nearest: {x.shape}, factor {factor}")
    if factor == 1:
        return x
    H, W = x.shape[:2]
    rest = x.shape[2:]
    out = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)

    def bw(g):
        return (g.reshape(H, factor, W, factor, *rest).sum(axis=(1, 3)),)

    return Tensor._from_op(out, (x,), bw, "upsample_nearest")


@lru_cache(maxsize=64)
def bilinear_matrix(n: int, factor: int) -> np.ndarray:
    """``(n*factor, n)`` interpolation weights, half-pixel centres, edge clamped."""
    m = n * factor
    src = (np.arange(m) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    A = np.zeros((m, n))
    A[np.arange(m), lo] += 1.0 - frac
    A[np.arange(m), hi] += frac
    A.setflags(write=False)
    return A


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    _check(x.ndim == 3 and factor >= 1, f"upsample_bilinear: {x.shape}, factor {factor}")
    if factor == 1:
        return x
    H, W, _ = x.shape
    Ah = bilinear_matrix(H, factor)
    Aw = bilinear_matrix(W, factor)
    out = np.einsum("ih,jw,hwc->ijc", Ah, Aw, x.data, optimize=True)

    def bw(g):
        return (np.einsum("ih,jw,ijc->hwc", Ah, Aw, g, optimize=True),)

    return Tensor._from_op(out, (x,), bw, "upsample_bilinear")


def grid_sample(z: Tensor, offsets: Tensor) -> Tensor:
    """Bilinear read of ``z`` at ``(row + fy, col + fx)`` for every pixel.

    ``offsets[..., 0]`` is the column (x) offset, ``offsets[..., 1]`` the row (y)
    offset. Sample positions are clamped to the image; the gradient with respect
    to a clamped coordinate is 0. Differentiable in both ``z`` and ``offsets``.
    """
    _check(z.ndim == 3 and offsets.shape == z.shape[:2] + (2,), f"grid_sample: z {z.shape}, offsets {offsets.shape}")
    H, W, C = z.shape
    Z = z.data
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    sx = cols + offsets.data[..., 0]
    sy = rows + offsets.data[..., 1]
    in_x = (sx >= 0) & (sx <= W - 1)
    in_y = (sy >= 0) & (sy <= H - 1)
    sx = np.clip(sx, 0, W - 1)
    sy = np.clip(sy, 0, H - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (sx - x0).ravel()
    wy = (sy - y0).ravel()
    n = H * W
    cols_idx = np.concatenate([(y0 * W + x0).ravel(), (y0 * W + x1).ravel(), (y1 * W + x0).ravel(), (y1 * W + x1).ravel()])
    vals = np.concatenate([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy])
    rows_idx = np.tile(np.arange(n), 4)
    interp = sparse.csr_matrix((vals, (rows_idx, cols_idx)), shape=(n, n))
    Zf = Z.reshape(n, C)
    out = np.asarray(interp @ Zf).reshape(H, W, C)

    def bw(g):
        gf = g.reshape(n, C)
        gz = np.asarray(interp.T @ gf).reshape(H, W, C)
        v00 = Zf[cols_idx[:n]]
        v01 = Zf[cols_idx[n : 2 * n]]
        v10 = Zf[cols_idx[2 * n : 3 * n]]
        v11 = Zf[cols_idx[3 * n :]]
        wxc, wyc = wx[:, None], wy[:, None]
        dx = ((v01 - v00) * (1 - wyc) + (v11 - v10) * wyc) * gf
        dy = ((v10 - v00) * (1 - wxc) + (v11 - v01) * wxc) * gf
        goff = np.stack([dx.sum(axis=-1).reshape(H, W) * in_x, dy.sum(axis=-1).reshape(H, W) * in_y], axis=-1)
        return gz, goff

    return Tensor._from_op(out, (z, offsets), bw, "grid_sample")
