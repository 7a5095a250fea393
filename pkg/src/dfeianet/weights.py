"""Binary weight files.

Layout (little-endian)::

    b"DFEW" | u32 version=1 | u32 count
    count x ( u16 name_len | utf-8 name | u8 rank | u32 extents[rank] | f32 data[prod] )

Tensors are written in registry order.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    MissingParameterError,
    ShapeMismatchError,
    UnexpectedEOFError,
    UnknownParameterError,
    VersionMismatchError,
    WeightFileError,
)
from .network import Model, NetworkConfig, build

MAGIC = b"DFEW"
VERSION = 1


def dumps(model: Model) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(model.registry)))
    for p in model.registry:
        name = p.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)))
        buf.write(name)
        buf.write(struct.pack("<B", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return buf.getvalue()


def save_weights(model: Model, path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise UnexpectedEOFError(f"while reading {what} at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse(raw: bytes) -> dict[str, np.ndarray]:
    """Decode a weight file into ``{name: float32 array}``, preserving order."""
    r = _Reader(raw)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"not a DFEW weight file (magic {magic!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported weight format version {version} (expected {VERSION})")
    (count,) = r.unpack("<I", "tensor count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFileError(f"tensor {i} has a non-UTF-8 name: {e}") from None
        (rank,) = r.unpack("<B", f"rank of {name!r}")
        shape = r.unpack(f"<{rank}I", f"extents of {name!r}")
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * n, f"data of {name!r}"), dtype="<f4")
        if name in out:
            raise WeightFileError(f"duplicate tensor name {name!r}")
        out[name] = data.reshape(shape).astype(np.float32)
    if r.pos != len(raw):
        raise WeightFileError(f"{len(raw) - r.pos} trailing bytes after the last tensor")
    return out


def load_into(model: Model, tensors: dict[str, np.ndarray]) -> Model:
    params = dict(model.named_parameters())
    for name, arr in tensors.items():
        if name not in params:
            raise UnknownParameterError(name)
        if arr.shape != params[name].shape:
            raise ShapeMismatchError(name, params[name].shape, arr.shape)
    missing = [n for n in params if n not in tensors]
    if missing:
        raise MissingParameterError(missing)
    for name, arr in tensors.items():
        params[name].assign(arr)
        params[name].zero_grad()
    return model


def load_weights(path, config: NetworkConfig | None = None) -> Model:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise WeightFileError(f"weight file not found: {path}") from None
    tensors = parse(raw)
    return load_into(build(config or NetworkConfig(), seed=0), tensors)
