"""The nine acceptance criteria, one test each.

A PASS/FAIL line per criterion is printed in the "acceptance criteria"
section of the pytest summary (see conftest.py).
"""
import time

import numpy as np
import pytest

from dfeianet import blocks
from dfeianet.data import load_dataset
from dfeianet.errors import (BadMagicError, ShapeMismatchError, UnexpectedEOFError,
                             UnknownParameterError, VersionMismatchError)
from dfeianet.layers import Initializer
from dfeianet.metrics import ConfusionCounts, report
from dfeianet.network import NetworkConfig, build, count_flops, count_params
from dfeianet.plotting import read_log
from dfeianet.selftest import randomize, suite_gradients
from dfeianet.tensor import Tensor, no_grad
from dfeianet.train import evaluate
from dfeianet.wavelet import SubbandSet, dwt2, idwt2
from dfeianet.weights import dumps, load_weights, parse, save_weights

from oracles import attention_naive, per_class_metrics

F64 = np.float64


def acceptance(label):
    return pytest.mark.acceptance(label)


@acceptance("1. gradient correctness")
def test_gradient_correctness():
    t0 = time.perf_counter()
    res = suite_gradients(thorough=True)
    seconds = time.perf_counter() - t0
    assert res.passed, res.failures
    assert res.assertions >= 20
    assert seconds <= 300


@acceptance("2. wavelet exactness")
def test_wavelet_exactness():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n, c = rng.integers(1, 3, endpoint=True), rng.integers(1, 8, endpoint=True)
        h, w = 2 * rng.integers(1, 8, endpoint=True), 2 * rng.integers(1, 8, endpoint=True)
        x = rng.standard_normal((n, c, h, w))
        s = dwt2(Tensor(x))
        assert np.max(np.abs(idwt2(s).data - x)) <= 1e-12
        e = float(np.sum(x * x))
        assert abs(s.energy() - e) <= 1e-10 * max(e, 1.0)
        b = [Tensor(rng.standard_normal((n, c, h // 2, w // 2))) for _ in range(4)]
        again = dwt2(idwt2(SubbandSet(*b)))
        for got, want in zip(again, b):
            assert np.max(np.abs(got.data - want.data)) <= 1e-12


def _zero(*convs):
    for conv in convs:
        conv.weight.data[...] = 0
        conv.bias.data[...] = 0


@acceptance("3. residual identity")
def test_residual_identity():
    rng = np.random.default_rng(3)
    init = Initializer(3, F64)
    x = rng.standard_normal((2, 8, 8, 8))

    fdfe = blocks.make_fdfe(init, "f", 8)
    mbms = blocks.make_mbms(init, "m", 8)
    cpe = blocks.make_cpe(init, "c", 8)
    afg = blocks.make_afg(init, "a", 8, 2)
    cmsfe = blocks.make_cmsfe(init, "s", 8)
    for w in (fdfe, mbms, cpe, afg, cmsfe):
        randomize(w.parameters(), rng, 0.5)
    _zero(fdfe.dw_ll, fdfe.adw_lh, fdfe.adw_hl, fdfe.dw_hh)
    _zero(mbms.project)
    _zero(cpe.dw)
    cpe.grn.beta.data[...] = 0  # GRN maps 0 to beta
    _zero(afg.project)
    _zero(cmsfe.project)
    cases = [(blocks.fdfe_forward, fdfe), (blocks.mbms_forward, mbms), (blocks.cpe_forward, cpe),
             (blocks.afg_forward, afg), (blocks.cmsfe_forward, cmsfe)]
    with no_grad():
        for fn, w in cases:
            out = fn(Tensor(x), w).data
            assert out.dtype == F64 and np.array_equal(out, x), fn.__name__


@acceptance("4. attention oracle")
def test_attention_oracle():
    rng = np.random.default_rng(4)
    c, heads, d = 64, 2, 32
    w = blocks.make_afg(Initializer(4, F64), "a", c, heads)
    randomize(w.parameters(), rng, 0.2)
    for dw in (w.dw_k, w.dw_v):
        dw.weight.data[...] = 0
        dw.weight.data[:, :, 1, 1] = 1.0
        dw.bias.data[...] = 0
    x = rng.standard_normal((1, c, 8, 8))
    with no_grad():
        got = blocks.afg_forward(Tensor(x), w).data

    # independent vanilla multi-head attention on the token matrix
    tokens = x[0].reshape(c, 64).T
    qkv = tokens @ w.qkv.weight.data[:, :, 0, 0].T + w.qkv.bias.data
    q, k, v = qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:]
    heads_out = [attention_naive(q[:, i * d:(i + 1) * d], k[:, i * d:(i + 1) * d],
                                 v[:, i * d:(i + 1) * d]) for i in range(heads)]
    y = np.concatenate(heads_out, 1) @ w.project.weight.data[:, :, 0, 0].T + w.project.bias.data
    want = (y + tokens).T.reshape(1, c, 8, 8)
    assert np.max(np.abs(got - want)) <= 1e-5


@acceptance("5. structural calibration")
def test_structural_calibration():
    def counts(**kw):
        m = build(NetworkConfig(**kw), 0)
        return count_params(m), count_flops(m)

    p, f = counts()
    assert 3.0e6 <= p <= 5.0e6
    assert 0.85e9 <= f <= 1.6e9
    k7, k9, k11 = counts(adw_kernel=7), counts(adw_kernel=9), counts(adw_kernel=11)
    assert k7[0] < k9[0] < k11[0] and k7[1] < k9[1] < k11[1]
    trad = counts(attention_variant="traditional")
    assert trad[0] < p and trad[1] < f
    cfg = NetworkConfig()
    closed_form = sum(depth * 2 * (9 * c + c)
                      for kind, depth, c in zip(cfg.block_plan, cfg.stage_depths, cfg.stage_channels)
                      if kind == "MSIA")
    assert p - trad[0] == closed_form


@acceptance("6. optimization sanity")
def test_optimization_sanity(overfit_run, synthetic_root, tiny_config):
    first = overfit_run[0]
    assert first["code"] == 0
    assert first["seconds"] <= 600
    entries = read_log(first["log"])
    steps = len(entries) * -(-len(load_dataset(synthetic_root, "train", 7)) // 16)
    assert steps == 200
    assert entries[-1]["train_loss"] < 0.05
    assert entries[-1]["train_loss"] < entries[0]["train_loss"]
    model = load_weights(first["weights"], tiny_config)
    _, rep = evaluate(model, load_dataset(synthetic_root, "train", 7))
    assert rep.accuracy == 1.0
    again = read_log(overfit_run[1]["log"])
    assert [e["train_loss"] for e in again] == [e["train_loss"] for e in entries]


@acceptance("7. metrics exactness")
def test_metrics_exactness():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        k = int(rng.integers(2, 10))
        m = rng.integers(0, 30, (k, k))
        m[rng.random((k, k)) < 0.15] = 0
        rep = report(ConfusionCounts(m))
        for got, want in zip(rep.per_class, per_class_metrics(m.tolist())):
            for key in ("precision", "recall", "specificity", "f1"):
                assert abs(got[key] - want[key]) <= 1e-9
        assert abs(rep.accuracy - (np.trace(m) / m.sum() if m.sum() else 0.0)) <= 1e-9
    for _ in range(200):
        k, n = int(rng.integers(2, 10)), int(rng.integers(1, 50))
        m = np.stack([rng.multinomial(n, rng.dirichlet(np.ones(k))) for _ in range(k)])
        rep = report(ConfusionCounts(m))
        assert abs(rep.macro["recall"] - rep.accuracy) <= 1e-9


@acceptance("8. serialization")
def test_serialization(tmp_path, tiny_config):
    model = build(tiny_config, 8)
    rng = np.random.default_rng(8)
    randomize(model.parameters(), rng, 0.5)
    for p in model.parameters():
        p.data = p.data.astype(np.float32)
    path = tmp_path / "w.dfew"
    save_weights(model, path)
    back = load_weights(path, tiny_config)
    for (n1, a), (n2, b) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()
    raw = path.read_bytes()
    assert dumps(back) == raw

    for cut in (0, 7, len(raw) // 2, len(raw) - 1):
        with pytest.raises(UnexpectedEOFError, match="unexpected end of file"):
            parse(raw[:cut])
    with pytest.raises(BadMagicError):
        parse(b"WFED" + raw[4:])
    with pytest.raises(VersionMismatchError):
        parse(raw[:4] + (9).to_bytes(4, "little") + raw[8:])
    nlen = int.from_bytes(raw[12:14], "little")
    renamed = tmp_path / "renamed.dfew"
    renamed.write_bytes(raw[:14] + b"z" * nlen + raw[14 + nlen:])
    with pytest.raises(UnknownParameterError):
        load_weights(renamed, tiny_config)
    wider = NetworkConfig(**{**tiny_config.to_dict(), "stage_channels": [16, 32, 32, 96]})
    with pytest.raises(ShapeMismatchError):
        load_weights(path, wider)


@acceptance("9. determinism")
def test_determinism(overfit_run, tiny_config):
    a, b = (r["weights"].read_bytes() for r in overfit_run)
    assert a == b
    model = load_weights(overfit_run[0]["weights"], tiny_config).astype(F64)
    x = Tensor(np.random.default_rng(9).standard_normal((2, 3, 32, 32)))
    with no_grad():
        outs = [model(x).data for _ in range(3)]
    assert max(np.max(np.abs(o - outs[0])) for o in outs) <= 1e-12
    assert build(tiny_config, 5).state_dict().keys() == build(tiny_config, 5).state_dict().keys()
    assert dumps(build(tiny_config, 5)) == dumps(build(tiny_config, 5))
