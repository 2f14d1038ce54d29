"""Differentiable operations.

Every function here runs a numpy forward pass and, when a tape is active and
some input requires gradients, registers an analytic backward rule.  The op
surface is intentionally narrow: exactly what the enhancement network needs,
with no broadcasting beyond bias-add and per-channel affine.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .autodiff import Tensor, check_same_dtype, record_op
from .errors import ConfigurationError, DimensionError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _accum(x: Tensor, g: np.ndarray) -> None:
    if x.requires_grad:
        x.ensure_grad()
        x.grad += g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and reductions

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    check_same_dtype(a, b)

    def bwd(g, _):
        _accum(a, g)
        _accum(b, g)

    return record_op([a, b], a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    check_same_dtype(a, b)

    def bwd(g, _):
        _accum(a, g)
        _accum(b, -g)

    return record_op([a, b], a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    check_same_dtype(a, b)

    def bwd(g, _):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return record_op([a, b], a.data * b.data, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    def bwd(g, _):
        _accum(x, g * c)

    return record_op([x], x.data * c, bwd)


def mul_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a learnable scalar tensor (shape ``()``)."""
    if s.data.size != 1:
        raise DimensionError(f"mul_scalar: scalar operand has shape {s.shape}")
    check_same_dtype(x, s)

    def bwd(g, _):
        _accum(x, g * s.data)
        _accum(s, np.asarray((g * x.data).sum(), dtype=s.dtype).reshape(s.shape))

    return record_op([x, s], x.data * s.data, bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g, _):
        _accum(x, np.full_like(x.data, g.reshape(())))

    return record_op([x], np.asarray(x.data.sum(), dtype=x.dtype), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def bwd(g, _):
        _accum(x, np.full_like(x.data, g.reshape(()) / n))

    return record_op([x], np.asarray(x.data.mean(), dtype=x.dtype), bwd)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x: Tensor, shape: tuple) -> Tensor:
    def bwd(g, _):
        _accum(x, g.reshape(x.shape))

    return record_op([x], x.data.reshape(shape), bwd)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    inv = np.argsort(axes)

    def bwd(g, _):
        _accum(x, g.transpose(inv))

    return record_op([x], x.data.transpose(axes), bwd)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    check_same_dtype(*tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, _):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return record_op(tensors, np.concatenate([t.data for t in tensors], axis=axis), bwd)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, r*H, r*W)."""
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise DimensionError(f"pixel_shuffle: channels {c} not divisible by {r * r} (axis 1)")
    co = c // (r * r)

    def fwd(a):
        return (a.reshape(n, co, r, r, h, w)
                 .transpose(0, 1, 4, 2, 5, 3)
                 .reshape(n, co, h * r, w * r))

    def bwd(g, _):
        _accum(x, _unshuffle_data(g, r))

    return record_op([x], fwd(x.data), bwd)


def _unshuffle_data(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return (a.reshape(n, c, h // r, r, w // r, r)
             .transpose(0, 1, 3, 5, 2, 4)
             .reshape(n, c * r * r, h // r, w // r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H, W) -> (N, C*r*r, H/r, W/r); exact inverse of pixel_shuffle."""
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise DimensionError(f"pixel_unshuffle: spatial {h}x{w} not divisible by {r} (axes 2,3)")

    def bwd(g, _):
        co = c
        _accum(x, (g.reshape(n, co, r, r, h // r, w // r)
                    .transpose(0, 1, 4, 2, 5, 3)
                    .reshape(n, co, h, w)))

    return record_op([x], _unshuffle_data(x.data, r), bwd)


# ---------------------------------------------------------------------------
# matmul / attention arithmetic

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product (..., m, k) @ (..., k, n); batch dims must match."""
    check_same_dtype(a, b)
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def bwd(g, _):
        _accum(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        _accum(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return record_op([a, b], np.matmul(a.data, b.data), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, _):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot))

    return record_op([x], y, bwd)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    ss = (x.data * x.data).sum(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(ss + eps)
    y = x.data * inv

    def bwd(g, _):
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        _accum(x, g * inv - x.data * (dot * inv ** 3))

    return record_op([x], y, bwd)


# ---------------------------------------------------------------------------
# activations and normalization

def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: y = x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = (x.data * phi_cdf).astype(x.dtype)

    def bwd(g, _):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        _accum(x, g * (phi_cdf + x.data * pdf))

    return record_op([x], y, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis per spatial location, then affine."""
    if eps <= 0:
        raise ConfigurationError(f"layer_norm: eps must be > 0, got {eps}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match C={c} (axis 1)")
    check_same_dtype(x, gamma, beta)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gb = gamma.data[None, :, None, None]
    y = gb * xhat + beta.data[None, :, None, None]

    def bwd(g, _):
        dxhat = g * gb
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))
        _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, g.sum(axis=(0, 2, 3)))

    return record_op([x, gamma, beta], y.astype(x.dtype), bwd)


def group_norm(x: Tensor, num_groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-6) -> Tensor:
    """Per-(sample, group) normalization over (C/G, H, W), per-channel affine."""
    n, c, h, w = x.shape
    if c % num_groups != 0:
        raise ConfigurationError(f"group_norm: C={c} not divisible by num_groups={num_groups}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"group_norm: affine shapes {gamma.shape}/{beta.shape} do not match C={c} (axis 1)")
    check_same_dtype(x, gamma, beta)
    grouped = x.data.reshape(n, num_groups, -1)
    mu = grouped.mean(axis=2, keepdims=True)
    xc = grouped - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(n, c, h, w)
    gb = gamma.data[None, :, None, None]
    y = gb * xhat + beta.data[None, :, None, None]

    def bwd(g, _):
        dxhat = (g * gb).reshape(n, num_groups, -1)
        xh = xhat.reshape(n, num_groups, -1)
        m1 = dxhat.mean(axis=2, keepdims=True)
        m2 = (dxhat * xh).mean(axis=2, keepdims=True)
        _accum(x, (inv * (dxhat - m1 - xh * m2)).reshape(n, c, h, w))
        _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, g.sum(axis=(0, 2, 3)))

    return record_op([x, gamma, beta], y.astype(x.dtype), bwd)


# ---------------------------------------------------------------------------
# convolution

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2D cross-correlation with grouping; groups=Cin gives a depthwise conv.

    Output extents follow H' = (H + 2*padding - kh)/stride + 1, which must be
    exact; non-dividing geometry is rejected rather than floored.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4D input/weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise ConfigurationError(
            f"conv2d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // groups:
        raise DimensionError(
            f"conv2d: weight in-channels {cin_g} != Cin/groups {cin // groups} (weight axis 1)")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({cout},)")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp} (axes 2,3)")
    if (hp - kh) % stride != 0 or (wp - kw) % stride != 0:
        raise DimensionError(
            f"conv2d: geometry ({h}x{wd}, pad {padding}, kernel {kh}x{kw}) "
            f"not divisible by stride {stride} (axes 2,3)")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    inputs = [x, w] if b is None else [x, w, b]
    check_same_dtype(*inputs)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.reshape(n, groups, cin // groups, ho, wo, kh, kw)
    wg = w.data.reshape(groups, cout // groups, cin // groups, kh, kw)
    y = np.einsum("ngchwij,gocij->ngohw", cols, wg, optimize=True)
    y = np.ascontiguousarray(y.reshape(n, cout, ho, wo))
    if b is not None:
        y += b.data[None, :, None, None]

    def bwd(g, _):
        gg = g.reshape(n, groups, cout // groups, ho, wo)
        if w.requires_grad:
            dw = np.einsum("ngchwij,ngohw->gocij", cols, gg, optimize=True)
            _accum(w, dw.reshape(cout, cin // groups, kh, kw))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.einsum("gocij,ngohw->ngchwij", wg, gg, optimize=True)
            dcols = dcols.reshape(n, cin, ho, wo, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride,
                        j:j + stride * wo:stride] += dcols[:, :, :, :, i, j]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accum(x, dxp)

    return record_op(inputs, y, bwd)


# ---------------------------------------------------------------------------
# losses

def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at zero residual is 0."""
    _check_same_shape(pred, target, "l1_loss")
    check_same_dtype(pred, target)
    diff = pred.data - target.data

    def bwd(g, _):
        s = np.sign(diff) * (g.reshape(()) / diff.size)
        _accum(pred, s)
        _accum(target, -s)

    return record_op([pred, target], np.asarray(np.abs(diff).mean(), dtype=pred.dtype), bwd)
