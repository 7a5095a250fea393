"""MSFD and MSIA blocks.

MSFD = frequency-domain feature extraction (FDFE) then the multi-branch
multi-scale layer (MBMS).  MSIA = conditional positional encoding (CPE),
adaptive feature guidance attention (AFG), then the cascade multi-scale
layer (CMSFE).  Each layer ends in a residual add, so zeroing its last
projection turns it into the identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from . import ops
from .errors import ConfigurationError
from .layers import GRN, Conv, Initializer, collect
from .tensor import Parameter, Tensor
from .wavelet import SubbandSet, dwt2, idwt2

ADW_KERNELS = (7, 9, 11)
MBMS_VARIANTS = ("dilated", "large_kernel")
ATTENTION_VARIANTS = ("interaction", "traditional")


# ------------------------------------------------------------------- MSFD

@dataclass
class FDFEWeights:
    dw_ll: Conv
    dw_hh: Conv
    adw_lh: Conv  # 1 x k
    adw_hl: Conv  # k x 1

    def parameters(self) -> Iterator[Parameter]:
        return collect(self.dw_ll, self.adw_lh, self.adw_hl, self.dw_hh)

    def macs(self, n, h, w) -> int:
        return sum(c.macs(n, h // 2, w // 2)[0]
                   for c in (self.dw_ll, self.adw_lh, self.adw_hl, self.dw_hh))


@dataclass
class MBMSWeights:
    expand: Conv
    b1: Conv
    b2: Conv
    b3: Conv
    grn: GRN
    fuse_dw: Conv
    project: Conv

    def parameters(self) -> Iterator[Parameter]:
        return collect(self.expand, self.b1, self.b2, self.b3, self.grn, self.fuse_dw, self.project)

    def macs(self, n, h, w) -> int:
        return sum(c.macs(n, h, w)[0] for c in
                   (self.expand, self.b1, self.b2, self.b3, self.fuse_dw, self.project))


@dataclass
class MSFDBlockWeights:
    fdfe: FDFEWeights
    mbms: MBMSWeights

    def parameters(self) -> Iterator[Parameter]:
        yield from self.fdfe.parameters()
        yield from self.mbms.parameters()

    def macs(self, n, h, w) -> int:
        return self.fdfe.macs(n, h, w) + self.mbms.macs(n, h, w)


def make_fdfe(init: Initializer, prefix: str, c: int, adw_kernel: int = 9) -> FDFEWeights:
    if adw_kernel not in ADW_KERNELS:
        raise ConfigurationError(f"adw_kernel must be one of {ADW_KERNELS}, got {adw_kernel}")
    return FDFEWeights(
        dw_ll=init.depthwise(f"{prefix}.dw_ll", c),
        adw_lh=init.depthwise(f"{prefix}.adw_lh", c, (1, adw_kernel)),
        adw_hl=init.depthwise(f"{prefix}.adw_hl", c, (adw_kernel, 1)),
        dw_hh=init.depthwise(f"{prefix}.dw_hh", c),
    )


def make_mbms(init: Initializer, prefix: str, c: int, variant: str = "dilated") -> MBMSWeights:
    if variant not in MBMS_VARIANTS:
        raise ConfigurationError(f"mbms_variant must be one of {MBMS_VARIANTS}, got {variant!r}")
    expand = init.conv(f"{prefix}.expand", c, 4 * c, 1)
    b1 = init.depthwise(f"{prefix}.b1", 2 * c)
    if variant == "dilated":
        b2 = init.depthwise(f"{prefix}.b2", c, dilation=2)
        b3 = init.depthwise(f"{prefix}.b3", c, dilation=3)
    else:
        b2 = init.depthwise(f"{prefix}.b2", c, (5, 5))
        b3 = init.depthwise(f"{prefix}.b3", c, (7, 7))
    return MBMSWeights(
        expand=expand, b1=b1, b2=b2, b3=b3,
        grn=init.grn(f"{prefix}.grn", 4 * c),
        fuse_dw=init.depthwise(f"{prefix}.fuse_dw", 4 * c),
        project=init.conv(f"{prefix}.project", 4 * c, c, 1),
    )


def make_msfd(init: Initializer, prefix: str, c: int, adw_kernel: int = 9,
              mbms_variant: str = "dilated") -> MSFDBlockWeights:
    return MSFDBlockWeights(make_fdfe(init, f"{prefix}.fdfe", c, adw_kernel),
                            make_mbms(init, f"{prefix}.mbms", c, mbms_variant))


def fdfe_forward(x: Tensor, w: FDFEWeights) -> Tensor:
    bands = dwt2(x)
    filtered = SubbandSet(w.dw_ll(bands.ll), w.adw_lh(bands.lh), w.adw_hl(bands.hl), w.dw_hh(bands.hh))
    return ops.add(idwt2(filtered), x)


def mbms_forward(z: Tensor, w: MBMSWeights) -> Tensor:
    c = z.shape[1]
    if w.expand.out_channels != 4 * c:
        raise ConfigurationError(f"MBMS expand gives {w.expand.out_channels} channels, need {4 * c}")
    z1, z2, z3 = ops.split(w.expand(z), (2 * c, c, c), axis=1)
    y = ops.concat([w.b1(z1), w.b2(z2), w.b3(z3)], axis=1)
    y = w.fuse_dw(w.grn(ops.gelu(y)))
    return ops.add(w.project(y), z)


def msfd_forward(x: Tensor, w: MSFDBlockWeights) -> Tensor:
    return mbms_forward(fdfe_forward(x, w.fdfe), w.mbms)


# ------------------------------------------------------------------- MSIA

@dataclass
class CPEWeights:
    dw: Conv
    grn: GRN

    def parameters(self) -> Iterator[Parameter]:
        return collect(self.dw, self.grn)

    def macs(self, n, h, w) -> int:
        return self.dw.macs(n, h, w)[0]


@dataclass
class AFGWeights:
    qkv: Conv
    dw_k: Conv | None  # None on the plain self-attention variant
    dw_v: Conv | None
    project: Conv
    heads: int

    def __post_init__(self):
        c = self.project.out_channels
        if self.heads < 1 or c % self.heads:
            raise ConfigurationError(f"channels {c} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.project.out_channels // self.heads

    def parameters(self) -> Iterator[Parameter]:
        return collect(self.qkv, self.dw_k, self.dw_v, self.project)

    def macs(self, n, h, w) -> int:
        total = self.qkv.macs(n, h, w)[0] + self.project.macs(n, h, w)[0]
        for agg in (self.dw_k, self.dw_v):
            if agg is not None:
                total += agg.macs(n, h, w)[0]
        tokens = h * w
        # QK'^T and the value product
        total += 2 * n * self.heads * tokens * tokens * self.head_dim
        return total


@dataclass
class CMSFEWeights:
    expand: Conv
    cascade: tuple[Conv, Conv, Conv, Conv]
    grn: GRN
    fuse_dw: Conv
    project: Conv

    def parameters(self) -> Iterator[Parameter]:
        return collect(self.expand, *self.cascade, self.grn, self.fuse_dw, self.project)

    def macs(self, n, h, w) -> int:
        return sum(c.macs(n, h, w)[0] for c in
                   (self.expand, *self.cascade, self.fuse_dw, self.project))


@dataclass
class MSIABlockWeights:
    cpe: CPEWeights
    afg: AFGWeights
    cmsfe: CMSFEWeights

    def parameters(self) -> Iterator[Parameter]:
        yield from self.cpe.parameters()
        yield from self.afg.parameters()
        yield from self.cmsfe.parameters()

    def macs(self, n, h, w) -> int:
        return self.cpe.macs(n, h, w) + self.afg.macs(n, h, w) + self.cmsfe.macs(n, h, w)


def make_cpe(init: Initializer, prefix: str, c: int) -> CPEWeights:
    return CPEWeights(init.depthwise(f"{prefix}.dw", c), init.grn(f"{prefix}.grn", c))


def make_afg(init: Initializer, prefix: str, c: int, heads: int,
             variant: str = "interaction") -> AFGWeights:
    if variant not in ATTENTION_VARIANTS:
        raise ConfigurationError(
            f"attention_variant must be one of {ATTENTION_VARIANTS}, got {variant!r}")
    if heads < 1 or c % heads:
        raise ConfigurationError(f"channels {c} not divisible by heads {heads}")
    qkv = init.conv(f"{prefix}.qkv", c, 3 * c, 1)
    dw_k = dw_v = None
    if variant == "interaction":
        dw_k = init.depthwise(f"{prefix}.dw_k", c)
        dw_v = init.depthwise(f"{prefix}.dw_v", c)
    return AFGWeights(qkv, dw_k, dw_v, init.conv(f"{prefix}.project", c, c, 1), heads)


def make_cmsfe(init: Initializer, prefix: str, c: int) -> CMSFEWeights:
    return CMSFEWeights(
        expand=init.conv(f"{prefix}.expand", c, 4 * c, 1),
        cascade=tuple(init.depthwise(f"{prefix}.cascade{i + 1}", c) for i in range(4)),
        grn=init.grn(f"{prefix}.grn", 4 * c),
        fuse_dw=init.depthwise(f"{prefix}.fuse_dw", 4 * c),
        project=init.conv(f"{prefix}.project", 4 * c, c, 1),
    )


def make_msia(init: Initializer, prefix: str, c: int, heads: int,
              attention_variant: str = "interaction") -> MSIABlockWeights:
    return MSIABlockWeights(
        make_cpe(init, f"{prefix}.cpe", c),
        make_afg(init, f"{prefix}.afg", c, heads, attention_variant),
        make_cmsfe(init, f"{prefix}.cmsfe", c),
    )


def cpe_forward(x: Tensor, w: CPEWeights) -> Tensor:
    return ops.add(w.grn(w.dw(x)), x)


def to_tokens(x: Tensor, heads: int) -> Tensor:
    """[N,C,H,W] -> [N*heads, H*W, C/heads]."""
    n, c, h, w = x.shape
    t = ops.reshape(x, (n, heads, c // heads, h * w))
    t = ops.transpose(t, (0, 1, 3, 2))
    return ops.reshape(t, (n * heads, h * w, c // heads))


def from_tokens(t: Tensor, n: int, h: int, w: int) -> Tensor:
    nh, hw, d = t.shape
    heads = nh // n
    t = ops.reshape(t, (n, heads, hw, d))
    t = ops.transpose(t, (0, 1, 3, 2))
    return ops.reshape(t, (n, heads * d, h, w))


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over token axes; softmax over keys."""
    d = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def afg_forward(x: Tensor, w: AFGWeights) -> Tensor:
    n, c, h, wd = x.shape
    if c % w.heads:
        raise ConfigurationError(f"channels {c} not divisible by heads {w.heads}")
    q, k, v = ops.split(w.qkv(x), (c, c, c), axis=1)
    if w.dw_k is not None:
        k = w.dw_k(k)
    if w.dw_v is not None:
        v = w.dw_v(v)
    out = attention(to_tokens(q, w.heads), to_tokens(k, w.heads), to_tokens(v, w.heads))
    return ops.add(w.project(from_tokens(out, n, h, wd)), x)


def cmsfe_forward(z: Tensor, w: CMSFEWeights) -> Tensor:
    c = z.shape[1]
    if w.expand.out_channels != 4 * c:
        raise ConfigurationError(f"CMSFE expand gives {w.expand.out_channels} channels, need {4 * c}")
    parts = ops.split(w.expand(z), (c, c, c, c), axis=1)
    outs = []
    prev = None
    for zi, dw in zip(parts, w.cascade):
        prev = dw(zi if prev is None else ops.add(zi, prev))
        outs.append(prev)
    y = w.fuse_dw(w.grn(ops.gelu(ops.concat(outs, axis=1))))
    return ops.add(w.project(y), z)


def msia_forward(x: Tensor, w: MSIABlockWeights) -> Tensor:
    return cmsfe_forward(afg_forward(cpe_forward(x, w.cpe), w.afg), w.cmsfe)
