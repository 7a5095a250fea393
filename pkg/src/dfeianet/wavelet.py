"""Single-level orthonormal 2-D Haar transform, applied per channel.

For every non-overlapping 2x2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2     # top rows minus bottom rows
    HL = (a - b + c - d) / 2     # left columns minus right columns
    HH = (a - b - c + d) / 2

The transform matrix is symmetric and orthogonal, so it is its own inverse
and its own adjoint; both directions share the backward rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor, record


@dataclass(frozen=True)
class SubbandSet:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self}
        if len(shapes) != 1:
            raise ConfigurationError(f"subband shapes differ: {sorted(shapes)}")

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ll.shape

    def energy(self) -> float:
        return float(sum(np.sum(t.data.astype(np.float64) ** 2) for t in self))


def _analysis(x: np.ndarray) -> np.ndarray:
    """[N,C,H,W] -> [4,N,C,H/2,W/2] stacked (LL, LH, HL, HH)."""
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    s_ab, d_ab = a + b, a - b
    s_cd, d_cd = c + d, c - d
    half = x.dtype.type(0.5)
    return np.stack(
        [(s_ab + s_cd) * half, (s_ab - s_cd) * half, (d_ab + d_cd) * half, (d_ab - d_cd) * half]
    )


def _synthesis(ll, lh, hl, hh) -> np.ndarray:
    n, c, h, w = ll.shape
    dtype = np.result_type(ll, lh, hl, hh)
    half = dtype.type(0.5)
    p, m = ll + lh, ll - lh
    q, r = hl + hh, hl - hh
    out = np.empty((n, c, 2 * h, 2 * w), dtype=dtype)
    out[:, :, 0::2, 0::2] = (p + q) * half
    out[:, :, 0::2, 1::2] = (p - q) * half
    out[:, :, 1::2, 0::2] = (m + r) * half
    out[:, :, 1::2, 1::2] = (m - r) * half
    return out


def dwt2(x: Tensor) -> SubbandSet:
    if x.ndim != 4:
        raise ConfigurationError(f"dwt2 expects [N,C,H,W], got {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ConfigurationError(f"dwt2 needs even spatial extents, got {h}x{w}")
    bands = _analysis(x.data)

    def back(g):
        return (_synthesis(*g),)

    stacked = record("dwt2", (x,), bands, back)
    # unpack through a differentiable index so each subband is its own tensor
    return SubbandSet(*_unstack(stacked))


def _unstack(t: Tensor) -> list[Tensor]:
    parts = []
    for k in range(t.shape[0]):
        def back(g, k=k):
            full = np.zeros(t.shape, dtype=g.dtype)
            full[k] = g
            return (full,)

        parts.append(record("unstack", (t,), np.ascontiguousarray(t.data[k]), back))
    return parts


def idwt2(s: SubbandSet) -> Tensor:
    if not isinstance(s, SubbandSet):
        s = SubbandSet(*s)
    out = _synthesis(*(t.data for t in s))

    def back(g):
        return tuple(_analysis(g))

    return record("idwt2", tuple(s), out, back)
