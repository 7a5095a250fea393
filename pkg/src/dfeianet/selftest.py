"""Verification suites behind ``dfeianet selftest``.

Each suite returns a :class:`SuiteResult`; a suite passes only if every
assertion in it held.  ``thorough`` widens shapes and repetition counts.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blocks, ops, wavelet
from .errors import (
    BadMagicError,
    ShapeMismatchError,
    UnexpectedEOFError,
    UnknownParameterError,
)
from .gradcheck import gradcheck, leaf
from .layers import Initializer
from .metrics import ConfusionCounts, report
from .network import NetworkConfig, build
from .tensor import CHECK_DTYPE, Tensor, no_grad


@dataclass
class SuiteResult:
    name: str
    assertions: int = 0
    failures: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self, cond: bool, what: str) -> None:
        self.assertions += 1
        if not cond:
            self.failures.append(what)


def randomize(params, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter with float64 noise (so no path is trivially zero)."""
    for p in params:
        p.data = rng.normal(0.0, scale, p.shape).astype(CHECK_DTYPE)
        p.grad = np.zeros_like(p.data)


# ----------------------------------------------------------------- oracles

def gelu_reference(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def vanilla_mhsa(x: np.ndarray, wqkv, bqkv, wproj, bproj, heads: int) -> np.ndarray:
    """Plain multi-head self-attention with residual, token loops in numpy."""
    n, c, h, w = x.shape
    d = c // heads
    tokens = x.reshape(n, c, h * w).transpose(0, 2, 1)  # [N, T, C]
    qkv = tokens @ wqkv.T + bqkv  # [N, T, 3C]
    q, k, v = qkv[..., :c], qkv[..., c:2 * c], qkv[..., 2 * c:]
    out = np.zeros_like(tokens)
    for b in range(n):
        for hd in range(heads):
            sl = slice(hd * d, (hd + 1) * d)
            s = q[b, :, sl] @ k[b, :, sl].T / math.sqrt(d)
            s = np.exp(s - s.max(axis=1, keepdims=True))
            s /= s.sum(axis=1, keepdims=True)
            out[b, :, sl] = s @ v[b, :, sl]
    y = out @ wproj.T + bproj
    return y.transpose(0, 2, 1).reshape(n, c, h, w) + x


def brute_force_metrics(matrix: np.ndarray) -> dict:
    k = matrix.shape[0]
    total = int(matrix.sum())
    per = []
    for c in range(k):
        tp = fp = fn = tn = 0
        for i in range(k):
            for j in range(k):
                cnt = int(matrix[i, j])
                if i == c and j == c:
                    tp += cnt
                elif j == c:
                    fp += cnt
                elif i == c:
                    fn += cnt
                else:
                    tn += cnt
        div = lambda a, b: a / b if b else 0.0  # noqa: E731
        per.append((div(tp, tp + fp), div(tp, tp + fn), div(tn, tn + fp), div(2 * tp, 2 * tp + fp + fn)))
    arr = np.array(per)
    return {"precision": arr[:, 0].mean(), "recall": arr[:, 1].mean(),
            "specificity": arr[:, 2].mean(), "f1": arr[:, 3].mean(),
            "accuracy": sum(int(matrix[i, i]) for i in range(k)) / total if total else 0.0}


# ------------------------------------------------------------------ suites

def _primitive_cases(rng, thorough: bool):
    n = 2
    c = 4 if not thorough else 8
    s = 6 if not thorough else 8
    r = lambda *shape: leaf(rng.standard_normal(shape))  # noqa: E731
    cases = []

    x, w, b = r(n, c, s, s), r(c, 1, 3, 3), r(c)
    cases.append(("conv2d depthwise 3x3", lambda: ops.conv2d(x, w, b, 1, 1, 1, c), [x, w, b]))
    x2, w2, b2 = r(n, c, s, s), r(c, 1, 3, 3), r(c)
    cases.append(("conv2d depthwise dilation 2",
                  lambda: ops.conv2d(x2, w2, b2, 1, 2, 2, c), [x2, w2, b2]))
    x3, w3, b3 = r(1, c, s, s), r(c, 1, 1, 9), r(c)
    cases.append(("conv2d asymmetric 1x9", lambda: ops.conv2d(x3, w3, b3, 1, (0, 4), 1, c), [x3, w3, b3]))
    x4, w4, b4 = r(n, c, s, s), r(2 * c, c, 1, 1), r(2 * c)
    cases.append(("conv2d pointwise", lambda: ops.conv2d(x4, w4, b4), [x4, w4, b4]))
    x5, w5, b5 = r(n, 3, s, s), r(c, 3, 3, 3), r(c)
    cases.append(("conv2d dense stride 2", lambda: ops.conv2d(x5, w5, b5, 2, 1), [x5, w5, b5]))
    x6, w6 = r(1, c, s, s), r(c, c // 2, 3, 3)
    cases.append(("conv2d grouped", lambda: ops.conv2d(x6, w6, None, 1, 1, 1, 2), [x6, w6]))

    xg = r(n, c, s, s)
    cases.append(("gelu", lambda: ops.gelu(xg), [xg]))
    xn, gam, bet = r(n, c, 5, 5), r(c), r(c)
    cases.append(("grn", lambda: ops.grn(xn, ops.GrnParams(gam, bet)), [xn, gam, bet]))
    xs = r(n, 5, 7)
    cases.append(("softmax", lambda: ops.softmax(xs, -1), [xs]))
    a, bm = r(3, 4, 5), r(3, 5, 2)
    cases.append(("matmul", lambda: ops.matmul(a, bm), [a, bm]))
    xp = r(n, c, 3, 5)
    cases.append(("global_avg_pool", lambda: ops.global_avg_pool(xp), [xp]))
    xl, wl, bl = r(n, 6), r(4, 6), r(4)
    cases.append(("linear", lambda: ops.linear(xl, wl, bl), [xl, wl, bl]))
    xc = r(4, 8)
    labels = rng.integers(0, 8, 4)
    cases.append(("cross_entropy", lambda: ops.cross_entropy(xc, labels), [xc]))
    xa, xb = r(n, c, 1, s), r(1, c, s, s)
    cases.append(("add/mul broadcast", lambda: ops.mul(ops.add(xa, xb), xb), [xa, xb]))
    xr = r(n, 2 * c, 3, 3)
    cases.append(("split/concat/transpose/reshape", lambda: ops.reshape(ops.transpose(
        ops.concat(ops.split(xr, (c, c), 1)[::-1], 1), (0, 2, 3, 1)), (n, -1)), [xr]))
    xw = r(n, c, s, s)
    cases.append(("dwt2", lambda: ops.concat(list(wavelet.dwt2(xw)), 1), [xw]))
    bands = [r(n, c, s // 2, s // 2) for _ in range(4)]
    cases.append(("idwt2", lambda: wavelet.idwt2(wavelet.SubbandSet(*bands)), bands))
    return cases


def _block_cases(rng, thorough: bool):
    c = 8
    s = 8
    n = 1 if not thorough else 2
    init = Initializer(0, CHECK_DTYPE)
    cases = []
    for label, w, fn in [
        ("fdfe", blocks.make_fdfe(init, "fdfe", c), blocks.fdfe_forward),
        ("mbms", blocks.make_mbms(init, "mbms", c), blocks.mbms_forward),
        ("msfd", blocks.make_msfd(init, "msfd", c), blocks.msfd_forward),
        ("cpe", blocks.make_cpe(init, "cpe", c), blocks.cpe_forward),
        ("afg", blocks.make_afg(init, "afg", c, heads=2), blocks.afg_forward),
        ("afg traditional", blocks.make_afg(init, "afgt", c, 2, "traditional"), blocks.afg_forward),
        ("cmsfe", blocks.make_cmsfe(init, "cmsfe", c), blocks.cmsfe_forward),
        ("msia", blocks.make_msia(init, "msia", c, heads=2), blocks.msia_forward),
    ]:
        params = list(w.parameters())
        randomize(params, rng, 0.2)
        x = leaf(rng.standard_normal((n, c, s, s)))
        cases.append((f"block {label}", (lambda fn=fn, x=x, w=w: fn(x, w)), [x, *params]))
    return cases


def suite_gradients(thorough: bool = False, seed: int = 0) -> SuiteResult:
    res = SuiteResult("gradients")
    rng = np.random.default_rng(seed)
    # value anchors so an approximate GELU cannot hide behind a self-consistent gradient
    for v in (-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.5):
        got = float(ops.gelu(Tensor(np.array([v], CHECK_DTYPE))).data[0])
        res.check(abs(got - gelu_reference(v)) <= 1e-9, f"gelu({v}) value {got} != {gelu_reference(v)}")
    for name, fn, leaves in _primitive_cases(rng, thorough):
        r = gradcheck(fn, leaves, name, rng=rng)
        res.check(r.ok(), f"{name}: rel err {r.max_rel_err:.3g} at {r.worst}")
    per_leaf = None if thorough else 48
    for name, fn, leaves in _block_cases(rng, thorough):
        r = gradcheck(fn, leaves, name, max_per_leaf=per_leaf, rng=rng)
        res.check(r.ok(), f"{name}: rel err {r.max_rel_err:.3g} at {r.worst}")
    return res


def suite_wavelet(thorough: bool = False, seed: int = 1) -> SuiteResult:
    res = SuiteResult("wavelet")
    rng = np.random.default_rng(seed)
    reps = 100 if not thorough else 400
    for i in range(reps):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)),
                 2 * int(rng.integers(1, 6)), 2 * int(rng.integers(1, 6)))
        x = Tensor(rng.standard_normal(shape))
        with no_grad():
            bands = wavelet.dwt2(x)
            back = wavelet.idwt2(bands)
            sb = wavelet.SubbandSet(*(Tensor(rng.standard_normal(bands.shape)) for _ in range(4)))
            again = wavelet.dwt2(wavelet.idwt2(sb))
        res.check(np.max(np.abs(back.data - x.data)) <= 1e-12, f"idwt2(dwt2(x)) != x (rep {i})")
        res.check(all(np.max(np.abs(a.data - b.data)) <= 1e-12 for a, b in zip(again, sb)),
                  f"dwt2(idwt2(s)) != s (rep {i})")
        e_in = float(np.sum(x.data ** 2))
        res.check(abs(bands.energy() - e_in) <= 1e-10 * max(e_in, 1.0), f"energy not preserved (rep {i})")
    return res


def suite_attention(thorough: bool = False, seed: int = 2) -> SuiteResult:
    res = SuiteResult("attention")
    rng = np.random.default_rng(seed)
    shapes = [(1, 64, 8, 8, 2)] + ([(2, 32, 5, 7, 4), (1, 64, 4, 4, 1)] if thorough else [])
    for n, c, h, w, heads in shapes:
        init = Initializer(int(rng.integers(1 << 30)), CHECK_DTYPE)
        afg = blocks.make_afg(init, "afg", c, heads)
        randomize(afg.parameters(), rng, 0.2)
        delta = np.zeros((c, 1, 3, 3))
        delta[:, 0, 1, 1] = 1.0
        for dw in (afg.dw_k, afg.dw_v):
            dw.weight.data = delta.copy()
            dw.bias.data = np.zeros(c)
        x = rng.standard_normal((n, c, h, w))
        with no_grad():
            got = blocks.afg_forward(Tensor(x), afg).data
        ref = vanilla_mhsa(x, afg.qkv.weight.data[:, :, 0, 0], afg.qkv.bias.data,
                           afg.project.weight.data[:, :, 0, 0], afg.project.bias.data, heads)
        err = float(np.max(np.abs(got - ref)))
        res.check(err <= 1e-5, f"AFG vs vanilla attention {[n, c, h, w]}: max err {err:.3g}")
        trad = blocks.AFGWeights(afg.qkv, None, None, afg.project, heads)
        with no_grad():
            got_t = blocks.afg_forward(Tensor(x), trad).data
        res.check(float(np.max(np.abs(got_t - ref))) <= 1e-5,
                  f"traditional variant vs vanilla attention {[n, c, h, w]}")
    return res


def suite_metrics(thorough: bool = False, seed: int = 3) -> SuiteResult:
    res = SuiteResult("metrics")
    rng = np.random.default_rng(seed)
    reps = 200 if not thorough else 1000
    for i in range(reps):
        k = int(rng.integers(2, 9))
        m = rng.integers(0, 30, (k, k))
        rep = report(ConfusionCounts(m))
        ref = brute_force_metrics(m)
        res.check(all(abs(rep.macro[key] - ref[key]) <= 1e-9 for key in ref),
                  f"macro metrics differ from brute force (rep {i})")
        cm = ConfusionCounts(m)
        res.check(bool(np.all(cm.tp() + cm.fp() + cm.fn() + cm.tn() == cm.total)),
                  f"TP+FP+FN+TN != total (rep {i})")
        # balanced rows: macro recall == top-1 accuracy
        bal = rng.multinomial(50, rng.dirichlet(np.ones(k)), size=k)
        rb = report(ConfusionCounts(bal))
        res.check(abs(rb.macro["recall"] - rb.accuracy) <= 1e-9, f"balanced recall != accuracy (rep {i})")
    return res


def suite_serialization(thorough: bool = False, seed: int = 4) -> SuiteResult:
    from .weights import dumps, load_weights, parse, save_weights

    res = SuiteResult("serialization")
    cfg = NetworkConfig(stage_depths=[1, 1, 1, 1], stage_channels=[8, 16, 32, 64], input_size=32)
    model = build(cfg, seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "w.dfew"
        save_weights(model, path)
        loaded = load_weights(path, cfg)
        res.check(all(np.array_equal(a.data, b.data) and a.name == b.name
                      for a, b in zip(model.registry, loaded.registry)), "round trip not bit-exact")
        res.check(dumps(loaded) == path.read_bytes(), "re-serialized bytes differ")
        raw = path.read_bytes()

        def expect(blob, exc, what):
            try:
                parse_and_load(blob)
            except exc:
                res.check(True, what)
            except Exception as e:  # noqa: BLE001
                res.check(False, f"{what}: raised {type(e).__name__}: {e}")
            else:
                res.check(False, f"{what}: no error raised")

        def parse_and_load(blob):
            from .weights import load_into
            return load_into(build(cfg, 0), parse(blob))

        cut_points = [len(raw) - 1, len(raw) // 2, 10] + ([len(raw) - 4, 6, 13] if thorough else [])
        for cut in cut_points:
            expect(raw[:cut], UnexpectedEOFError, f"truncated at {cut} bytes")
        expect(b"XXXX" + raw[4:], BadMagicError, "bad magic")
        first = model.registry[0].name.encode()
        renamed = raw.replace(first, b"x" * len(first), 1)
        expect(renamed, UnknownParameterError, "renamed tensor")
        other = build(NetworkConfig(stage_depths=[1, 1, 1, 1], stage_channels=[8, 16, 32, 64],
                                    input_size=32, num_classes=5), seed)
        expect(dumps(other), ShapeMismatchError, "shape mismatch")
    return res


SUITES = {
    "gradients": suite_gradients,
    "wavelet": suite_wavelet,
    "attention": suite_attention,
    "metrics": suite_metrics,
    "serialization": suite_serialization,
}


def run_all(thorough: bool = False, only=None) -> list[SuiteResult]:
    results = []
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            r = fn(thorough)
        except Exception as e:  # a crashing suite is a failing suite
            r = SuiteResult(name, 1, [f"suite raised {type(e).__name__}: {e}"])
        r.seconds = time.perf_counter() - t0
        results.append(r)
    return results
