"""Parameter-holding layer containers and deterministic initialization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigurationError
from .tensor import DEFAULT_DTYPE, Parameter, Tensor

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, bound: float = 2.0):
    """Normal(0, std) resampled until every draw lies within +-bound*std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class Initializer:
    """Creates named parameters from a single seeded stream.

    The draw order equals the creation order, which is also registry order,
    so a seed fully determines every weight.
    """

    def __init__(self, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def weight(self, name: str, shape) -> Parameter:
        return Parameter(trunc_normal(self.rng, shape).astype(self.dtype), name=name)

    def zeros(self, name: str, shape) -> Parameter:
        return Parameter(np.zeros(shape, dtype=self.dtype), name=name)

    def conv(self, name, cin, cout, kernel=(3, 3), groups=1, dilation=1, stride=1,
             padding=None, bias=True) -> "Conv":
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        dil = ops._pair(dilation)
        if padding is None:
            padding = (dil[0] * (kh - 1) // 2, dil[1] * (kw - 1) // 2)
        if cin % groups or cout % groups:
            raise ConfigurationError(f"{name}: groups={groups} must divide {cin} and {cout}")
        w = self.weight(f"{name}.weight", (cout, cin // groups, kh, kw))
        b = self.zeros(f"{name}.bias", (cout,)) if bias else None
        return Conv(w, b, ops._pair(stride), ops._pair(padding), dil, groups)

    def depthwise(self, name, channels, kernel=(3, 3), dilation=1) -> "Conv":
        return self.conv(name, channels, channels, kernel, groups=channels, dilation=dilation)

    def grn(self, name, channels) -> "GRN":
        return GRN(self.zeros(f"{name}.gamma", (channels,)), self.zeros(f"{name}.beta", (channels,)))

    def linear(self, name, fin, fout) -> "Linear":
        return Linear(self.weight(f"{name}.weight", (fout, fin)), self.zeros(f"{name}.bias", (fout,)))


@dataclass
class Conv:
    weight: Parameter
    bias: Parameter | None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding,
                          self.dilation, self.groups)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def macs(self, n: int, h: int, w: int) -> tuple[int, tuple[int, int]]:
        cin = self.weight.shape[1] * self.groups
        return ops.conv2d_macs(n, cin, h, w, self.weight.shape, self.stride, self.padding,
                               self.dilation, self.groups)

    def parameters(self) -> Iterator[Parameter]:
        yield self.weight
        if self.bias is not None:
            yield self.bias


@dataclass
class GRN:
    gamma: Parameter
    beta: Parameter
    eps: float = ops.GRN_EPS

    def __call__(self, x: Tensor) -> Tensor:
        return ops.grn(x, ops.GrnParams(self.gamma, self.beta, self.eps))

    def parameters(self) -> Iterator[Parameter]:
        yield self.gamma
        yield self.beta


@dataclass
class Linear:
    weight: Parameter
    bias: Parameter

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def macs(self, n: int) -> int:
        return n * self.weight.shape[0] * self.weight.shape[1]

    def parameters(self) -> Iterator[Parameter]:
        yield self.weight
        yield self.bias


def collect(*modules) -> Iterator[Parameter]:
    for m in modules:
        if m is not None:
            yield from m.parameters()
