from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fwpaint import tensor as T
from fwpaint.gradcheck import check_gradients
from fwpaint.tensor import (DimensionError, NumericError, RankError, Tape, Tensor, UsageError,
                            backward)


# scalar-loop oracles ------------------------------------------------------

def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def loop_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    s = b[oi] if b is not None else 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                y, xx = i * stride + u - pad, j * stride + v - pad
                                if 0 <= y < h and 0 <= xx < wd:
                                    s += x[ni, ci, y, xx] * w[oi, ci, u, v]
                    out[ni, oi, i, j] = s
    return out


def loop_conv_transpose2d(x, w, b, stride, pad):
    # scatter form: every input pixel adds a scaled kernel into the output
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    full = np.zeros((n, o, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    for oi in range(o):
                        for u in range(kh):
                            for v in range(kw):
                                full[ni, oi, i * stride + u, j * stride + v] += x[ni, ci, i, j] * w[ci, oi, u, v]
    out = full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]
    if b is not None:
        out = out + np.asarray(b)[None, :, None, None]
    return out


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# matmul / outer / softmax examples ----------------------------------------

def test_matmul_identity():
    out = T.matmul(t64([[1, 0], [0, 1]]), t64([[2], [3]]))
    np.testing.assert_array_equal(out.data, [[2], [3]])


def test_matmul_small_case():
    out = T.matmul(t64([[1, 2], [3, 4]]), t64([[5], [6]]))
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_zero_annihilates():
    out = T.matmul(t64(np.zeros((3, 2))), t64(np.random.default_rng(0).standard_normal((2, 4))))
    assert not out.data.any()


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


def test_outer_examples():
    np.testing.assert_array_equal(T.outer(t64([1, 0]), t64([0, 1])).data, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(T.outer(t64([2, 3]), t64([4, 5])).data, [[8, 10], [12, 15]])
    assert not T.outer(t64([1.5, -2.0]), t64([0, 0, 0])).data.any()


def test_outer_rejects_non_vectors():
    with pytest.raises(RankError):
        T.outer(t64(np.ones((2, 2))), t64([1, 2]))


def test_softmax_symmetric_and_saturated():
    np.testing.assert_allclose(T.softmax(t64([0, 0])).data, [0.5, 0.5])
    y = T.softmax(t64([1000, 0])).data
    assert np.all(np.isfinite(y))
    assert y[0] == pytest.approx(1.0) and y[1] < 1e-300


def test_softmax_against_decimal_reference():
    getcontext().prec = 40
    e = [Decimal(v).exp() for v in (1, 2, 3)]
    ref = [float(v / sum(e)) for v in e]
    np.testing.assert_allclose(T.softmax(t64([1, 2, 3])).data, ref, rtol=0, atol=1e-15)


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        T.softmax(t64([0.0, np.nan]))


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    y = T.softmax(Tensor(x)).data
    assert np.all(y > 0)
    assert abs(y.sum() - 1.0) < 1e-6


# elementwise / conv / pooling examples --------------------------------------

def test_sigmoid_zero():
    assert T.sigmoid(t64(0.0)).data == 0.5


def test_sigmoid_is_stable_at_extremes():
    y = T.sigmoid(t64([-1000.0, 1000.0])).data
    np.testing.assert_array_equal(y, [0.0, 1.0])


def test_box_downsample_constant():
    out = T.box_downsample(t64(np.ones((1, 1, 4, 4))), 2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))


def test_box_downsample_averages_blocks():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out = T.box_downsample(t64(x), 2).data[0, 0]
    np.testing.assert_array_equal(out, [[2.5, 4.5], [10.5, 12.5]])


def test_conv2d_unit_kernel_scales():
    x = np.random.default_rng(1).standard_normal((1, 1, 3, 3))
    out = T.conv2d(t64(x), t64(np.full((1, 1, 1, 1), 2.0)), stride=1)
    np.testing.assert_allclose(out.data, 2 * x, rtol=0, atol=1e-15)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = T.conv2d(t64(x), t64(w), t64(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, loop_conv2d(x, w, b, stride, pad), rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (2, 0)])
def test_conv_transpose2d_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((3, 2, 4, 4))
    b = rng.standard_normal(2)
    out = T.conv_transpose2d(t64(x), t64(w), t64(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, loop_conv_transpose2d(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 2, 8, 8))
    w = rng.standard_normal((3, 2, 4, 4))
    y = rng.standard_normal((1, 3, 4, 4))
    lhs = np.sum(T.conv2d(t64(x), t64(w), stride=2, padding=1).data * y)
    rhs = np.sum(x * T.conv_transpose2d(t64(y), t64(w), stride=2, padding=1).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_matmul_and_outer_match_loops(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    np.testing.assert_allclose(T.matmul(t64(a), t64(b)).data, loop_matmul(a, b), rtol=0, atol=1e-12)
    u, v = rng.standard_normal(m), rng.standard_normal(n)
    ref = np.array([[u[i] * v[j] for j in range(n)] for i in range(m)])
    np.testing.assert_allclose(T.outer(t64(u), t64(v)).data, ref, rtol=0, atol=1e-12)


def test_concat_split_roundtrip():
    x = t64(np.arange(10.0).reshape(2, 5))
    parts = T.split(x, [2, 3], axis=1)
    np.testing.assert_array_equal(T.concat(parts, axis=1).data, x.data)


def test_elementwise_broadcast_error():
    with pytest.raises(DimensionError):
        t64(np.ones((2, 3))) + t64(np.ones((4,)))


# backward ------------------------------------------------------------------

def test_grad_of_sum_is_ones():
    x = t64(np.random.default_rng(0).standard_normal((3, 2, 4)), grad=True)
    with Tape():
        loss = T.sum(x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_grad_of_sum_of_squares():
    x = t64(np.random.default_rng(1).standard_normal((5,)), grad=True)
    with Tape():
        loss = T.sum(x * x)
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=1e-15)


def test_grad_accumulates_over_reuse_and_broadcast():
    x = t64([1.0, 2.0], grad=True)
    b = t64(np.ones((3, 2)))
    with Tape():
        loss = T.sum(x * b) + T.sum(x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_matmul_gradient_rule():
    rng = np.random.default_rng(3)
    a, b = t64(rng.standard_normal((2, 3)), True), t64(rng.standard_normal((3, 4)), True)
    g = rng.standard_normal((2, 4))
    with Tape():
        loss = T.sum(T.matmul(a, b) * Tensor(g))
    backward(loss)
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-14)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-14)


def test_double_backward_is_usage_error():
    x = t64([1.0, 2.0], grad=True)
    with Tape():
        loss = T.sum(x * x)
    backward(loss)
    with pytest.raises(UsageError):
        backward(loss)


def test_tape_reentry_is_usage_error():
    tape = Tape()
    with tape:
        pass
    with pytest.raises(UsageError):
        with tape:
            pass


def test_non_scalar_loss_rejected():
    x = t64([1.0, 2.0], grad=True)
    with Tape():
        y = x * 2.0
    with pytest.raises(DimensionError):
        backward(y)


def test_loss_outside_tape_rejected():
    x = t64([1.0, 2.0], grad=True)
    with pytest.raises(UsageError):
        backward(T.sum(x))


def test_topological_order_on_tape():
    x = t64([1.0, -2.0], grad=True)
    with Tape() as tape:
        y = T.tanh(x) * x + T.exp(x)
        T.sum(y)
    seen = set()
    for out, parents, _ in tape.nodes:
        for p in parents:
            assert p._tape is None or id(p) in seen
        seen.add(id(out))


def test_leaf_gradient_shapes_match():
    rng = np.random.default_rng(4)
    leaves = [t64(rng.standard_normal(s), True) for s in [(2, 3), (3,), (1, 3)]]
    with Tape():
        loss = T.sum(T.tanh(leaves[0] + leaves[1]) * leaves[2])
    backward(loss)
    for leaf in leaves:
        assert leaf.grad.shape == leaf.shape


_UNARY = {
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "exp": T.exp,
    "softmax": T.softmax,
    "log_softmax": T.log_softmax,
    "square": lambda x: x * x,
}


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(sorted(_UNARY)),
       hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-2, 2)))
def test_random_input_gradients(name, x):
    # property: tape gradients agree with central differences for inputs in [-2, 2]
    fn = _UNARY[name]
    xt = Tensor(x.copy(), requires_grad=True)
    w = np.random.default_rng(0).standard_normal(x.shape)
    res = check_gradients(lambda: T.sum(fn(xt) * Tensor(w)), [xt])
    assert res.passed, (name, res.max_rel_error)


@settings(max_examples=10, deadline=None)
@given(hnp.arrays(np.float64, (2, 2, 4, 4), elements=st.floats(-2, 2)),
       hnp.arrays(np.float64, (3, 2, 3, 3), elements=st.floats(-2, 2)))
def test_random_conv_gradients(x, w):
    xt, wt = Tensor(x.copy(), requires_grad=True), Tensor(w.copy(), requires_grad=True)
    g = np.random.default_rng(1).standard_normal((2, 3, 2, 2))
    res = check_gradients(lambda: T.sum(T.conv2d(xt, wt, stride=2, padding=1) * Tensor(g)), [xt, wt])
    assert res.passed, res.max_rel_error
