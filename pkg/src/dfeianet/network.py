"""Full network: conv stem, four block stages, stride-2 downsamplers, head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import ops
from .blocks import (
    ATTENTION_VARIANTS,
    ADW_KERNELS,
    MBMS_VARIANTS,
    make_msfd,
    make_msia,
    msfd_forward,
    msia_forward,
)
from .errors import ConfigurationError, UsageError
from .layers import Conv, Initializer, Linear
from .tensor import DEFAULT_DTYPE, Parameter, Tensor

BLOCK_TYPES = ("MSFD", "MSIA")


@dataclass
class NetworkConfig:
    stage_depths: list[int] = field(default_factory=lambda: [2, 3, 5, 2])
    stage_channels: list[int] = field(default_factory=lambda: [80, 128, 128, 256])
    num_classes: int = 8
    adw_kernel: int = 9
    mbms_variant: str = "dilated"
    attention_variant: str = "interaction"
    block_plan: list[str] = field(default_factory=lambda: ["MSFD", "MSFD", "MSIA", "MSIA"])
    input_size: int = 224
    head_dim: int = 32

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "NetworkConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def stage_resolutions(self) -> list[int]:
        """Spatial size entering each stage (square inputs)."""
        res = [self.input_size]
        for _ in range(2):  # stem
            res.append((res[-1] - 1) // 2 + 1)
        out = [res[-1]]
        for _ in range(3):
            out.append((out[-1] - 1) // 2 + 1)
        return out

    def heads(self, stage: int) -> int:
        return self.stage_channels[stage] // self.head_dim

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(len(self.stage_depths) == 4, "stage_depths must list 4 stages")
        need(len(self.stage_channels) == 4, "stage_channels must list 4 stages")
        need(len(self.block_plan) == 4, "block_plan must list 4 stages")
        need(all(isinstance(d, int) and d >= 1 for d in self.stage_depths),
             "stage_depths must be positive integers")
        need(all(isinstance(c, int) and c >= 2 and c % 2 == 0 for c in self.stage_channels),
             "stage_channels must be even positive integers (stem uses C1/2)")
        need(isinstance(self.num_classes, int) and self.num_classes >= 2, "num_classes must be >= 2")
        need(self.adw_kernel in ADW_KERNELS, f"adw_kernel must be one of {list(ADW_KERNELS)}")
        need(self.mbms_variant in MBMS_VARIANTS, f"mbms_variant must be one of {list(MBMS_VARIANTS)}")
        need(self.attention_variant in ATTENTION_VARIANTS,
             f"attention_variant must be one of {list(ATTENTION_VARIANTS)}")
        need(all(b in BLOCK_TYPES for b in self.block_plan),
             f"block_plan entries must be one of {list(BLOCK_TYPES)}")
        need(isinstance(self.head_dim, int) and self.head_dim >= 1, "head_dim must be positive")
        need(isinstance(self.input_size, int) and self.input_size >= 4, "input_size must be >= 4")
        res = self.stage_resolutions()
        for i, (kind, c, r) in enumerate(zip(self.block_plan, self.stage_channels, res)):
            if kind == "MSIA":
                need(c % self.head_dim == 0,
                     f"stage{i + 1} uses MSIA: channels {c} must be divisible by head width "
                     f"{self.head_dim}")
            else:
                need(r % 2 == 0,
                     f"stage{i + 1} uses MSFD: resolution {r} must be even for the wavelet transform")


@dataclass
class Stage:
    kind: str
    downsample: Conv | None
    blocks: list


@dataclass
class Model:
    config: NetworkConfig
    stem: tuple[Conv, Conv]
    stages: list[Stage]
    head: Linear
    registry: list[Parameter] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        return list(self.registry)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for p in self.registry:
            yield p.name, p

    def zero_grad(self) -> None:
        for p in self.registry:
            p.zero_grad()

    @property
    def dtype(self):
        return self.registry[0].dtype

    def astype(self, dtype) -> "Model":
        """Cast every parameter in place (e.g. to float64 for gradient checks)."""
        for p in self.registry:
            p.data = p.data.astype(dtype)
            p.grad = p.grad.astype(dtype)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.registry}

    def __call__(self, x: Tensor, on_stage=None) -> Tensor:
        return forward(self, x, on_stage)


def _iter_stage_params(stage: Stage) -> Iterator[Parameter]:
    if stage.downsample is not None:
        yield from stage.downsample.parameters()
    for b in stage.blocks:
        yield from b.parameters()


def build(config: NetworkConfig | None = None, seed: int = 0, dtype=DEFAULT_DTYPE) -> Model:
    config = config or NetworkConfig()
    config.validate()
    init = Initializer(seed, dtype)
    c1 = config.stage_channels[0]
    stem = (
        init.conv("stem.conv1", 3, c1 // 2, 3, stride=2, padding=1),
        init.conv("stem.conv2", c1 // 2, c1, 3, stride=2, padding=1),
    )
    stages = []
    for i, (kind, depth, c) in enumerate(
        zip(config.block_plan, config.stage_depths, config.stage_channels)
    ):
        down = None
        if i > 0:
            down = init.conv(f"downsample{i}", config.stage_channels[i - 1], c, 3, stride=2, padding=1)
        blocks = []
        for j in range(depth):
            prefix = f"stage{i + 1}.block{j + 1}"
            if kind == "MSFD":
                blocks.append(make_msfd(init, prefix, c, config.adw_kernel, config.mbms_variant))
            else:
                blocks.append(make_msia(init, prefix, c, config.heads(i), config.attention_variant))
        stages.append(Stage(kind, down, blocks))
    head = init.linear("head", config.stage_channels[-1], config.num_classes)

    registry = [*stem[0].parameters(), *stem[1].parameters()]
    for st in stages:
        registry.extend(_iter_stage_params(st))
    registry.extend(head.parameters())
    seen = set()
    for p in registry:
        if p.name in seen:
            raise ConfigurationError(f"duplicate parameter name {p.name!r}")
        seen.add(p.name)
    return Model(config, stem, stages, head, registry)


def forward(model: Model, x: Tensor, on_stage: Callable[[int, Tensor], None] | None = None) -> Tensor:
    """Logits ``[N, num_classes]``.  ``on_stage(i, act)`` sees each stage output."""
    cfg = model.config
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=model.dtype))
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise UsageError(
            f"expected input [N,3,{cfg.input_size},{cfg.input_size}], got {list(x.shape)}"
        )
    h = model.stem[0](x)
    h = ops.gelu(h)
    h = model.stem[1](h)
    for i, st in enumerate(model.stages):
        if st.downsample is not None:
            h = st.downsample(h)
        fwd = msfd_forward if st.kind == "MSFD" else msia_forward
        for blk in st.blocks:
            h = fwd(h, blk)
        if on_stage is not None:
            on_stage(i, h)
    return model.head(ops.global_avg_pool(h))


# ------------------------------------------------------------------ counting

def count_params(model: Model) -> int:
    return int(sum(p.size for p in model.registry))


def stage_breakdown(model: Model, input_shape=None) -> list[dict]:
    """Per-section params and MACs: stem, stage1..4 (incl. their downsampler), head."""
    cfg = model.config
    if input_shape is None:
        input_shape = (1, 3, cfg.input_size, cfg.input_size)
    n, _, h, w = input_shape
    rows = []
    macs = 0
    for conv in model.stem:
        m, (h, w) = conv.macs(n, h, w)
        macs += m
    rows.append({"name": "stem",
                 "params": sum(p.size for c in model.stem for p in c.parameters()),
                 "macs": macs, "resolution": [h, w]})
    for i, st in enumerate(model.stages):
        macs = 0
        if st.downsample is not None:
            m, (h, w) = st.downsample.macs(n, h, w)
            macs += m
        for blk in st.blocks:
            macs += blk.macs(n, h, w)
        rows.append({"name": f"stage{i + 1}", "block": st.kind, "depth": len(st.blocks),
                     "channels": cfg.stage_channels[i],
                     "params": sum(p.size for p in _iter_stage_params(st)),
                     "macs": macs, "resolution": [h, w]})
    rows.append({"name": "head", "params": sum(p.size for p in model.head.parameters()),
                 "macs": model.head.macs(n), "resolution": [1, 1]})
    return rows


def count_flops(model: Model, input_shape=None) -> int:
    """Analytic multiply-accumulate count; elementwise and normalization ops excluded."""
    return int(sum(r["macs"] for r in stage_breakdown(model, input_shape)))
