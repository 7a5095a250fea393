import struct

import numpy as np
import pytest

from dfeianet.errors import (BadMagicError, MissingParameterError, ShapeMismatchError,
                             UnexpectedEOFError, UnknownParameterError, VersionMismatchError,
                             WeightFileError)
from dfeianet.network import NetworkConfig, build
from dfeianet.tensor import Tensor, no_grad
from dfeianet.weights import MAGIC, dumps, load_weights, parse, save_weights


@pytest.fixture
def cfg(tiny_config):
    return tiny_config


@pytest.fixture
def saved(cfg, tmp_path):
    m = build(cfg, 11)
    for p in m.parameters():  # make biases and GRN non-trivial too
        p.data = p.data + np.float32(0.01) * np.arange(p.size, dtype=np.float32).reshape(p.shape) / p.size
    path = tmp_path / "w.dfew"
    save_weights(m, path)
    return m, path


def rename_first(raw: bytes, new: bytes) -> bytes:
    (n,) = struct.unpack_from("<H", raw, 12)
    assert len(new) == n
    return raw[:14] + new + raw[14 + n:]


def test_round_trip_is_exact(saved, cfg, rng):
    m, path = saved
    back = load_weights(path, cfg)
    for (na, a), (nb, b) in zip(m.named_parameters(), back.named_parameters()):
        assert na == nb and np.array_equal(a.data, b.data)
    x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
    with no_grad():
        assert np.array_equal(m(x).data, back(x).data)
    assert dumps(back) == path.read_bytes()


def test_header_layout(saved):
    raw = saved[1].read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<II", raw, 4) == (1, len(saved[0].registry))


@pytest.mark.parametrize("cut", [0, 3, 6, 11, 13, 20, -1, -4, -1000])
def test_truncation(saved, cut):
    raw = saved[1].read_bytes()
    with pytest.raises(UnexpectedEOFError, match="unexpected end of file"):
        parse(raw[:cut] if cut >= 0 else raw[:len(raw) + cut])


def test_bad_magic_and_version(saved):
    raw = saved[1].read_bytes()
    with pytest.raises(BadMagicError):
        parse(b"XXXX" + raw[4:])
    with pytest.raises(VersionMismatchError):
        parse(raw[:4] + struct.pack("<I", 2) + raw[8:])


def test_trailing_bytes(saved):
    with pytest.raises(WeightFileError, match="trailing"):
        parse(saved[1].read_bytes() + b"\0")


def test_renamed_tensor(saved, cfg, tmp_path):
    raw = saved[1].read_bytes()
    name = raw[14:14 + struct.unpack_from("<H", raw, 12)[0]]
    bad = tmp_path / "bad.dfew"
    bad.write_bytes(rename_first(raw, b"X" * len(name)))
    with pytest.raises(UnknownParameterError, match="X" * len(name)):
        load_weights(bad, cfg)


def test_shape_mismatch(saved, cfg):
    with pytest.raises(ShapeMismatchError, match="stem.conv1.weight"):
        load_weights(saved[1], NetworkConfig(**{**cfg.to_dict(), "stage_channels": [24, 32, 32, 64]}))


def test_missing_parameter(saved, cfg):
    tensors = parse(saved[1].read_bytes())
    tensors.pop("head.bias")
    from dfeianet.weights import load_into
    with pytest.raises(MissingParameterError, match="head.bias"):
        load_into(build(cfg, 0), tensors)


def test_missing_file(tmp_path):
    with pytest.raises(WeightFileError, match="not found"):
        load_weights(tmp_path / "nope.dfew")
