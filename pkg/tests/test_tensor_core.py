import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfeianet import ops
from dfeianet.errors import ConfigurationError, UsageError
from dfeianet.gradcheck import gradcheck, leaf
from dfeianet.tensor import Parameter, Tape, Tensor, backward

from oracles import conv2d_naive, gelu_naive, grn_naive, matmul_naive, softmax_naive

GELU_1 = 0.841344746068542948585  # mpmath, 30 digits


def T(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype))


def delta_kernel(c, k=3):
    w = np.zeros((c, 1, k, k))
    w[:, 0, k // 2, k // 2] = 1.0
    return w


# ---------------------------------------------------------------- conv2d

def test_depthwise_delta_is_identity(rng):
    x = rng.standard_normal((2, 5, 7, 6))
    y = ops.conv2d(T(x), T(delta_kernel(5)), T(np.zeros(5)), 1, 1, 1, 5)
    assert np.array_equal(y.data, x)


def test_depthwise_all_ones_interior_is_nine_c():
    c = 2.5
    x = np.full((1, 3, 5, 5), c)
    y = ops.conv2d(T(x), T(np.ones((3, 1, 3, 3))), T(np.zeros(3)), 1, 1, 1, 3)
    assert y.data[0, :, 2, 2] == pytest.approx([9 * c] * 3)
    # border pixel sees zero padding: 4 taps in the corner
    assert y.data[0, 0, 0, 0] == pytest.approx(4 * c)


def test_asymmetric_1x9_matches_naive(rng):
    x = rng.standard_normal((1, 4, 6, 6))
    w = rng.standard_normal((4, 1, 1, 9))
    b = rng.standard_normal(4)
    got = ops.conv2d(T(x), T(w), T(b), 1, (0, 4), 1, 4).data
    ref = conv2d_naive(x, w, b, padding=(0, 4), groups=4)
    np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("cin,cout,k,stride,pad,dil,groups", [
    (3, 6, 3, 2, 1, 1, 1),
    (4, 8, 1, 1, 0, 1, 1),
    (6, 6, 3, 1, 2, 2, 6),
    (6, 6, 3, 1, 3, 3, 6),
    (4, 6, 3, 1, 1, 1, 2),
    (4, 8, 5, 1, 2, 1, 4),
    (5, 5, 7, 1, 3, 1, 5),
])
def test_conv_variants_match_naive(rng, cin, cout, k, stride, pad, dil, groups):
    x = rng.standard_normal((2, cin, 7, 8))
    w = rng.standard_normal((cout, cin // groups, k, k))
    b = rng.standard_normal(cout)
    got = ops.conv2d(T(x), T(w), T(b), stride, pad, dil, groups).data
    ref = conv2d_naive(x, w, b, (stride, stride), (pad, pad), (dil, dil), groups)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_conv_output_size_formula():
    x = T(np.zeros((1, 2, 11, 9)))
    y = ops.conv2d(x, T(np.zeros((4, 2, 3, 5))), None, (2, 3), (1, 2), (2, 1))
    ho = (11 + 2 - 2 * 2 - 1) // 2 + 1
    wo = (9 + 4 - 1 * 4 - 1) // 3 + 1
    assert y.shape == (1, 4, ho, wo)


@pytest.mark.parametrize("wshape,bias,groups", [
    ((4, 3, 3, 3), 4, 2),    # Cin/groups mismatch
    ((4, 2, 3, 3), 5, 2),    # bias length
    ((5, 2, 3, 3), 5, 2),    # Cout not divisible
])
def test_conv_shape_errors(wshape, bias, groups):
    with pytest.raises(ConfigurationError):
        ops.conv2d(T(np.zeros((1, 4, 5, 5))), T(np.zeros(wshape)), T(np.zeros(bias)), groups=groups)


def test_conv_float32_default():
    x = Tensor(np.ones((1, 2, 4, 4)))
    assert x.dtype == np.float64
    y = ops.conv2d(Tensor(np.ones((1, 2, 4, 4), np.float32)), Tensor(np.ones((2, 1, 3, 3), np.float32)),
                   groups=2, padding=1)
    assert y.dtype == np.float32


# ---------------------------------------------------------------- gelu

def test_gelu_values():
    g = ops.gelu(T([0.0, 10.0, 1.0])).data
    assert g[0] == 0.0
    assert abs(g[1] - 10.0) <= 1e-6
    assert abs(g[2] - GELU_1) <= 1e-12


@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-20, 20)))
@settings(max_examples=50, deadline=None)
def test_gelu_monotone_on_nonneg_and_matches_oracle(xs):
    y = ops.gelu(T(xs)).data
    np.testing.assert_allclose(y, gelu_naive(xs), rtol=1e-12, atol=1e-15)
    # exact GELU has its minimum near -0.75; it is nondecreasing above that
    s = np.sort(xs[xs >= -0.7517915])
    assert np.all(np.diff(ops.gelu(T(s)).data) >= -1e-15)


# ---------------------------------------------------------------- grn

def test_grn_zero_params_is_identity(rng):
    x = rng.standard_normal((2, 4, 5, 5))
    y = ops.grn(T(x), ops.GrnParams(T(np.zeros(4)), T(np.zeros(4))))
    assert np.array_equal(y.data, x)


def test_grn_equal_norms():
    x = np.ones((1, 3, 2, 2))  # each channel norm 2
    g, b = 0.7, -0.3
    y = ops.grn(T(x), ops.GrnParams(T(np.full(3, g)), T(np.full(3, b)))).data
    nx = 2.0 / (2.0 + 1e-6)
    np.testing.assert_allclose(y, g * x * nx + b + x, rtol=1e-15)


def test_grn_matches_oracle(rng):
    x = rng.standard_normal((2, 4, 5, 5))
    g, b = rng.standard_normal(4), rng.standard_normal(4)
    y = ops.grn(T(x), ops.GrnParams(T(g), T(b))).data
    np.testing.assert_allclose(y, grn_naive(x, g, b), rtol=1e-6, atol=1e-12)


def test_grn_all_zero_input_is_finite():
    y = ops.grn(T(np.zeros((1, 3, 4, 4))), ops.GrnParams(T(np.ones(3)), T(np.ones(3))))
    assert np.all(np.isfinite(y.data))
    np.testing.assert_array_equal(y.data, 1.0)


def test_grn_channel_mismatch():
    with pytest.raises(ConfigurationError):
        ops.grn(T(np.zeros((1, 3, 2, 2))), ops.GrnParams(T(np.zeros(4)), T(np.zeros(4))))


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_row():
    y = ops.softmax(T(np.full((1, 5), 3.3)), axis=-1).data
    np.testing.assert_allclose(y, 0.2, rtol=1e-15)


@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)), st.floats(-100, 100))
@settings(max_examples=50, deadline=None)
def test_softmax_properties(x, c):
    y = ops.softmax(T(x), axis=1).data
    assert np.all(y > 0) and np.all(y <= 1)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(ops.softmax(T(x + c), axis=1).data, y, atol=1e-6)


def test_softmax_matches_oracle(rng):
    x = rng.standard_normal((5, 7))
    y = ops.softmax(T(x), axis=-1).data
    ref = np.array([softmax_naive(r) for r in x])
    np.testing.assert_allclose(y, ref, atol=1e-7)


def test_softmax_large_inputs_stable():
    y = ops.softmax(T([[1000.0, 1000.0, -1000.0]]), -1).data
    np.testing.assert_allclose(y, [[0.5, 0.5, 0.0]])


# ---------------------------------------------------------------- matmul, pool, linear

def test_matmul_identity_and_scalar(rng):
    a = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ops.matmul(T(a), T(np.eye(4))).data, a)
    assert ops.matmul(T([[2.0]]), T([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_matches_oracle(rng):
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    np.testing.assert_allclose(ops.matmul(T(a), T(b)).data, matmul_naive(a, b), rtol=1e-6)


def test_matmul_batched_and_mismatch(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
    got = ops.matmul(T(a), T(b)).data
    for i in range(2):
        np.testing.assert_allclose(got[i], matmul_naive(a[i], b[i]), rtol=1e-9)
    with pytest.raises(ConfigurationError):
        ops.matmul(T(a), T(a))


def test_global_avg_pool():
    assert ops.global_avg_pool(T(np.full((1, 2, 3, 3), 1.5))).data.tolist() == [[1.5, 1.5]]
    assert ops.global_avg_pool(T([[[[1, 3], [5, 7]]]])).data.tolist() == [[4.0]]


def test_global_avg_pool_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    ref = [[sum(x[n, c].ravel()) / 20 for c in range(3)] for n in range(2)]
    np.testing.assert_allclose(ops.global_avg_pool(T(x)).data, ref, atol=1e-7)


def test_linear(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ops.linear(T(x), T(np.eye(4)), T(np.zeros(4))).data, x)
    assert ops.linear(T([[1.0, 2.0]]), T([[1.0, 1.0]]), T([1.0])).data.tolist() == [[4.0]]
    w, b = rng.standard_normal((2, 4)), rng.standard_normal(2)
    np.testing.assert_allclose(ops.linear(T(x), T(w), T(b)).data, matmul_naive(x, w.T) + b, rtol=1e-6)


# ---------------------------------------------------------------- tape

def test_quadratic_grad_is_2w(rng):
    w = Parameter(rng.standard_normal((3, 4)), name="w")
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(w, w))
    backward(loss, tape)
    np.testing.assert_allclose(w.grad, 2 * w.data)


def test_unreachable_param_keeps_zero_grad(rng):
    w = Parameter(rng.standard_normal(3), name="w")
    u = Parameter(rng.standard_normal(3), name="u")
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(u, u))
    tape.backward(loss)
    assert np.array_equal(w.grad, np.zeros(3))


def test_gradients_accumulate_until_zero_grad():
    w = Parameter(np.array([1.0, -2.0]), name="w")
    for _ in range(2):
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(w, w))
        tape.backward(loss)
    np.testing.assert_allclose(w.grad, 4 * w.data)
    w.zero_grad()
    assert np.array_equal(w.grad, [0.0, 0.0])


def test_backward_untaped_is_usage_error():
    w = Parameter(np.ones(2), name="w")
    loss = ops.sum_all(ops.mul(w, w))  # no tape active
    with pytest.raises(UsageError):
        backward(loss)
    with Tape() as tape:
        vec = ops.mul(w, w)
    with pytest.raises(UsageError):
        tape.backward(vec)


def test_backward_visits_in_reverse_order():
    w = Parameter(np.ones(2), name="w")
    with Tape() as tape:
        a = ops.scale(w, 2.0)
        b = ops.mul(a, w)
        loss = ops.sum_all(b)
    visited = []
    tape.backward(loss, visit=visited.append)
    assert [n.op for n in visited] == ["sum", "mul", "scale"]
    assert visited == list(reversed(tape.nodes))


def test_no_recording_without_grad_inputs():
    with Tape() as tape:
        ops.gelu(Tensor(np.ones(3)))
    assert len(tape) == 0


PRIMITIVE_CASES = {
    "conv2d": lambda r: ((lambda x, w, b: ops.conv2d(x, w, b, 1, 1, 1, 1)),
                         [r(2, 3, 5, 5), r(4, 3, 3, 3), r(4)]),
    "conv2d_dw_dilated_strided": lambda r: ((lambda x, w, b: ops.conv2d(x, w, b, 2, 2, 2, 4)),
                                            [r(2, 4, 8, 8), r(4, 1, 3, 3), r(4)]),
    "gelu": lambda r: (ops.gelu, [r(2, 4, 4, 4)]),
    "grn": lambda r: ((lambda x, g, b: ops.grn(x, ops.GrnParams(g, b))), [r(2, 4, 5, 5), r(4), r(4)]),
    "softmax": lambda r: ((lambda x: ops.softmax(x, 1)), [r(2, 6, 3)]),
    "matmul": lambda r: (ops.matmul, [r(2, 3, 4), r(2, 4, 5)]),
    "global_avg_pool": lambda r: (ops.global_avg_pool, [r(2, 4, 3, 3)]),
    "linear": lambda r: (ops.linear, [r(3, 5), r(2, 5), r(2)]),
    "narrow": lambda r: ((lambda x: ops.narrow(x, 1, 1, 2)), [r(2, 4, 3)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradcheck(name, rng):
    r = lambda *s: leaf(rng.standard_normal(s))  # noqa: E731
    fn, leaves = PRIMITIVE_CASES[name](r)
    res = gradcheck(lambda: fn(*leaves), leaves, name, rng=rng)
    assert res.ok(1e-4), res.worst


def test_forward_is_deterministic(rng):
    x = T(rng.standard_normal((1, 4, 6, 6)))
    w = T(rng.standard_normal((4, 1, 3, 3)))
    a = ops.gelu(ops.conv2d(x, w, None, 1, 1, 1, 4)).data
    b = ops.gelu(ops.conv2d(x, w, None, 1, 1, 1, 4)).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_parameter_grad_shape_tracks_value():
    p = Parameter(np.zeros((2, 3)), name="p")
    assert p.grad.shape == p.shape
    p.assign(np.ones((2, 3)))
    assert p.grad.shape == p.shape
    with pytest.raises(UsageError):
        p.assign(np.ones(3))
    assert math.isclose(p.value.data.sum(), 6.0)
