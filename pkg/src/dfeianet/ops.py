"""Differentiable primitives.

Every public function takes and returns :class:`~dfeianet.tensor.Tensor`
objects and records a backward closure on the active tape.  Kernels are
direct (shift-and-accumulate over kernel taps); no im2col, no FFT.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, UsageError
from .tensor import Tensor, record

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return record("add", (a, b), out, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    out = av * bv

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return record("mul", (a, b), out, back)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * a.data.dtype.type(c)

    def back(g):
        return (g * c,)

    return record("scale", (a,), out, back)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    shape = a.shape

    def back(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return record("sum", (a,), out, back)


def gelu_forward(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def gelu(x: Tensor) -> Tensor:
    xv = x.data
    out = gelu_forward(xv).astype(xv.dtype, copy=False)

    def back(g):
        return (g * gelu_derivative(xv).astype(xv.dtype, copy=False),)

    return record("gelu", (x,), out, back)


# ------------------------------------------------------------------- shaping

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)

    def back(g):
        return (g.reshape(old),)

    return record("reshape", (x,), out, back)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def back(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return record("transpose", (x,), out, back)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = tuple(xs)
    sizes = [t.shape[axis] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def back(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return record("concat", xs, out, back)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``[start, start+length)`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return record("narrow", (x,), out, back)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ConfigurationError(
            f"split sizes {list(sizes)} do not sum to extent {x.shape[axis]} of axis {axis}"
        )
    parts, start = [], 0
    for n in sizes:
        parts.append(narrow(x, axis, start, n))
        start += n
    return parts


# --------------------------------------------------------------- convolution

@dataclass(frozen=True)
class ConvGeometry:
    stride: tuple[int, int]
    padding: tuple[int, int]
    dilation: tuple[int, int]
    groups: int

    def out_size(self, h: int, w: int, kh: int, kw: int) -> tuple[int, int]:
        (sh, sw), (ph, pw), (dh, dw) = self.stride, self.padding, self.dilation
        ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
        wo = (w + 2 * pw - dw * (kw - 1) - 1) // sw + 1
        return ho, wo


def _tap_slices(i, j, geo: ConvGeometry, ho, wo):
    (sh, sw), (dh, dw) = geo.stride, geo.dilation
    r0, c0 = i * dh, j * dw
    return (
        slice(None),
        slice(None),
        slice(r0, r0 + sh * (ho - 1) + 1, sh),
        slice(c0, c0 + sw * (wo - 1) + 1, sw),
    )


def check_conv_shapes(x_shape, w_shape, bias_len, groups) -> None:
    if len(w_shape) != 4:
        raise ConfigurationError(f"conv weight must be rank 4, got {tuple(w_shape)}")
    cout, cin_g, _, _ = w_shape
    cin = x_shape[1]
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigurationError(
            f"groups={groups} must divide both Cin={cin} and Cout={cout}"
        )
    if cin // groups != cin_g:
        raise ConfigurationError(
            f"weight expects {cin_g} input channels per group, input gives {cin // groups}"
        )
    if bias_len is not None and bias_len != cout:
        raise ConfigurationError(f"bias length {bias_len} != Cout {cout}")


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    dilation=1,
    groups: int = 1,
) -> Tensor:
    """Grouped, dilated, strided 2-D convolution with zero padding."""
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d input must be [N,C,H,W], got {x.shape}")
    geo = ConvGeometry(_pair(stride), _pair(padding), _pair(dilation), int(groups))
    check_conv_shapes(x.shape, weight.shape, None if bias is None else bias.shape[0], geo.groups)

    xv, wv = x.data, weight.data
    n, c, h, w = xv.shape
    cout, cin_g, kh, kw = wv.shape
    ho, wo = geo.out_size(h, w, kh, kw)
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"conv2d output would be empty ({ho}x{wo}) for input {h}x{w}")
    ph, pw = geo.padding
    xp = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xv
    g = geo.groups
    depthwise = g == c and cin_g == 1 and cout == c
    dtype = np.result_type(xv.dtype, wv.dtype)

    out = np.zeros((n, cout, ho, wo), dtype=dtype)
    if depthwise:
        for i in range(kh):
            for j in range(kw):
                out += xp[_tap_slices(i, j, geo, ho, wo)] * wv[None, :, 0, i, j, None, None]
    else:
        cog = cout // g
        out_g = out.reshape(n, g, cog, ho * wo)
        for i in range(kh):
            for j in range(kw):
                xs = xp[_tap_slices(i, j, geo, ho, wo)].reshape(n, g, cin_g, ho * wo)
                wt = wv[:, :, i, j].reshape(g, cog, cin_g)
                out_g += np.matmul(wt[None], xs)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(gout):
        gxp = np.zeros(xp.shape, dtype=dtype) if x.requires_grad else None
        gw = np.zeros(wv.shape, dtype=dtype) if weight.requires_grad else None
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    sl = _tap_slices(i, j, geo, ho, wo)
                    if gxp is not None:
                        gxp[sl] += gout * wv[None, :, 0, i, j, None, None]
                    if gw is not None:
                        gw[:, 0, i, j] = np.einsum("nchw,nchw->c", gout, xp[sl])
        else:
            cog = cout // g
            go = gout.reshape(n, g, cog, ho * wo)
            for i in range(kh):
                for j in range(kw):
                    sl = _tap_slices(i, j, geo, ho, wo)
                    wt = wv[:, :, i, j].reshape(g, cog, cin_g)
                    if gxp is not None:
                        gx_tap = np.matmul(wt.transpose(0, 2, 1)[None], go)
                        gxp[sl] += gx_tap.reshape(n, c, ho, wo)
                    if gw is not None:
                        xs = xp[sl].reshape(n, g, cin_g, ho * wo)
                        gwt = np.matmul(go, xs.transpose(0, 1, 3, 2)).sum(axis=0)
                        gw[:, :, i, j] = gwt.reshape(cout, cin_g)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
            gx = np.ascontiguousarray(gx)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", inputs, out, back)


def conv2d_macs(n, cin, h, w, weight_shape, stride=1, padding=0, dilation=1, groups=1):
    """Multiply-accumulate count of a conv; returns (macs, (ho, wo))."""
    cout, cin_g, kh, kw = weight_shape
    geo = ConvGeometry(_pair(stride), _pair(padding), _pair(dilation), groups)
    ho, wo = geo.out_size(h, w, kh, kw)
    return n * ho * wo * cout * (cin // groups) * kh * kw, (ho, wo)


# ------------------------------------------------------------- normalization

GRN_EPS = 1e-6


@dataclass
class GrnParams:
    gamma: Tensor
    beta: Tensor
    eps: float = GRN_EPS

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ConfigurationError("GRN gamma and beta must be vectors of equal length")
        if not self.eps > 0:
            raise ConfigurationError("GRN epsilon must be positive")


def grn(x: Tensor, p: GrnParams) -> Tensor:
    """Global response normalization (per-sample channel L2-norm gating)."""
    if x.ndim != 4 or x.shape[1] != p.gamma.shape[0]:
        raise ConfigurationError(
            f"GRN has {p.gamma.shape[0]} channels, input {x.shape} does not match"
        )
    xv = x.data
    gam = p.gamma.data[None, :, None, None]
    bet = p.beta.data[None, :, None, None]
    c = xv.shape[1]
    gnorm = np.sqrt(np.sum(xv * xv, axis=(2, 3), keepdims=True))  # [N,C,1,1]
    s = gnorm.mean(axis=1, keepdims=True) + p.eps  # [N,1,1,1]
    nx = gnorm / s
    out = gam * (xv * nx) + bet + xv

    def back(g):
        dgamma = np.einsum("nchw,nchw->c", g, xv * nx) if p.gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2, 3)) if p.beta.requires_grad else None
        dx = None
        if x.requires_grad:
            a = np.sum(g * xv, axis=(2, 3), keepdims=True) * gam  # dL/dNx
            dg = a / s - np.sum(a * gnorm, axis=1, keepdims=True) / (s * s * c)
            safe = np.where(gnorm > 0, gnorm, 1.0)
            dx = g * (1.0 + gam * nx) + dg * np.where(gnorm > 0, xv / safe, 0.0)
        return dx, dgamma, dbeta

    return record("grn", (x, p.gamma, p.beta), out, back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xv = x.data
    z = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return record("softmax", (x,), y, back)


# --------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"matmul extent mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data
    out = np.matmul(av, bv)

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), out, back)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ConfigurationError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return record("global_avg_pool", (x,), out, back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ConfigurationError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigurationError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xv, wv = x.data, weight.data
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        grads = [g @ wv, g.T @ xv]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("linear", inputs, out, back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise UsageError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return record("cross_entropy", (logits,), loss, back)
