import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvae.errors import ChannelNotDivisibleBy4, ShapeMismatch
from qvae.gradcheck import check_tensors
from qvae.layers import (
    Layer, LayerKind, LayerSpec, QuaternionLayerWeights, count_parameters, count_weights, init_scale,
    init_weights, qconv2d_forward, qdense_forward, qtransposed_conv2d_forward, split_leaky_relu,
)
from qvae.quaternion import Quaternion, qmul, to_left_matrix
from qvae.tensor import Tensor, conv2d, dense, leaky_relu, transposed_conv2d


def _weights(shape, seed, bias_q=None, dtype=np.float64):
    rng = np.random.default_rng(seed)
    comps = [Tensor(rng.normal(size=shape).astype(dtype), requires_grad=True) for _ in range(4)]
    bias = None
    if bias_q is not None:
        bias = Tensor(rng.normal(size=4 * bias_q).astype(dtype), requires_grad=True)
    return QuaternionLayerWeights(*comps, bias=bias)


def _block_kernel(w: QuaternionLayerWeights, transposed=False):
    """Real kernel assembled from left-multiplication matrices, position by position.

    Transposed layers store kernels as (in, out, ...), so block (r, c) lands at (c, r).
    """
    comps = np.stack([t.data for t in w.components])  # (4, m, n, ...)
    m, n = comps.shape[1:3]
    rest = comps.shape[3:]
    out = np.zeros((4 * m, 4 * n) + rest)
    for o in range(m):
        for i in range(n):
            for pos in np.ndindex(*rest):
                L = to_left_matrix(Quaternion(*comps[(slice(None), o, i) + pos]))
                for r in range(4):
                    for c in range(4):
                        idx = (c * m + o, r * n + i) if transposed else (r * m + o, c * n + i)
                        out[idx + pos] = L[r, c]
    return out


def _planes(x, q):
    """Split (N, 4q, ...) into its four component blocks."""
    return [x[:, k * q:(k + 1) * q] for k in range(4)]


# reductions to qmul -------------------------------------------------------------------------

def test_qconv_1x1_is_qmul():
    w = _weights((1, 1, 1, 1), 0)
    x = np.random.default_rng(1).normal(size=(1, 4, 1, 1))
    out = qconv2d_forward(Tensor(x), w).data.reshape(4)
    expected = qmul(Quaternion(*(t.data.item() for t in w.components)), Quaternion(*x.reshape(4)))
    np.testing.assert_allclose(out, expected.as_array(), atol=1e-12)


def test_qtconv_1x1_is_qmul():
    w = _weights((1, 1, 1, 1), 2)
    x = np.random.default_rng(3).normal(size=(1, 4, 1, 1))
    out = qtransposed_conv2d_forward(Tensor(x), w).data.reshape(4)
    expected = qmul(Quaternion(*(t.data.item() for t in w.components)), Quaternion(*x.reshape(4)))
    np.testing.assert_allclose(out, expected.as_array(), atol=1e-12)


def test_qdense_single_feature_is_qmul_plus_bias():
    w = _weights((1, 1), 4, bias_q=1)
    x = np.random.default_rng(5).normal(size=(3, 4))
    out = qdense_forward(Tensor(x), w).data
    wq = Quaternion(*(t.data.item() for t in w.components))
    for row, got in zip(x, out):
        np.testing.assert_allclose(got, qmul(wq, Quaternion(*row)).as_array() + w.bias.data, atol=1e-12)


def test_qdense_identity():
    n = 3
    w = QuaternionLayerWeights(Tensor(np.eye(n)), *(Tensor(np.zeros((n, n))) for _ in range(3)))
    x = np.random.default_rng(0).normal(size=(2, 4 * n))
    np.testing.assert_array_equal(qdense_forward(Tensor(x), w).data, x)


def test_real_weights_act_per_plane():
    rng = np.random.default_rng(6)
    wa = rng.normal(size=(2, 3, 3, 3))
    zero = np.zeros_like(wa)
    w = QuaternionLayerWeights(Tensor(wa), Tensor(zero), Tensor(zero), Tensor(zero))
    x = rng.normal(size=(2, 12, 6, 6))
    out = qconv2d_forward(Tensor(x), w, padding=1).data
    for k, (xp, op) in enumerate(zip(_planes(x, 3), _planes(out, 2))):
        np.testing.assert_allclose(op, conv2d(Tensor(xp), Tensor(wa), padding=1).data, atol=1e-12)
    wt = QuaternionLayerWeights(Tensor(rng.normal(size=(3, 2, 4, 4))), *(Tensor(np.zeros((3, 2, 4, 4))) for _ in range(3)))
    y = rng.normal(size=(1, 12, 3, 3))
    out = qtransposed_conv2d_forward(Tensor(y), wt, stride=2, padding=1).data
    for yp, op in zip(_planes(y, 3), _planes(out, 2)):
        np.testing.assert_allclose(op, transposed_conv2d(Tensor(yp), wt.Wa, stride=2, padding=1).data, atol=1e-12)


# block-matrix and explicit expansion oracles -------------------------------------------------

def test_qconv_matches_sixteen_real_convolutions():
    rng = np.random.default_rng(7)
    w = _weights((2, 3, 3, 3), 8)
    x = rng.normal(size=(2, 12, 7, 7))
    a, b, c, d = (Tensor(p) for p in _planes(x, 3))
    Wa, Wb, Wc, Wd = w.components

    def cv(k, p):
        return conv2d(p, k, stride=2, padding=1).data

    # rows of the Hamilton product, written out by hand
    expected = np.concatenate([
        cv(Wa, a) - cv(Wb, b) - cv(Wc, c) - cv(Wd, d),
        cv(Wa, b) + cv(Wb, a) + cv(Wc, d) - cv(Wd, c),
        cv(Wa, c) - cv(Wb, d) + cv(Wc, a) + cv(Wd, b),
        cv(Wa, d) + cv(Wb, c) - cv(Wc, b) + cv(Wd, a),
    ], axis=1)
    np.testing.assert_allclose(qconv2d_forward(Tensor(x), w, stride=2, padding=1).data, expected, atol=1e-12)


@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (4, 2, 1), (2, 2, 0)])
def test_qconv_block_matrix(k, stride, pad):
    rng = np.random.default_rng(k + 10 * stride)
    w = _weights((2, 3, k, k), k, bias_q=2)
    size = 8
    x = rng.normal(size=(2, 12, size, size))
    ref = conv2d(Tensor(x), Tensor(_block_kernel(w)), w.bias, stride=stride, padding=pad).data
    np.testing.assert_allclose(qconv2d_forward(Tensor(x), w, stride, pad).data, ref, atol=1e-10)


@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (4, 2, 1), (2, 2, 0)])
def test_qtconv_block_matrix(k, stride, pad):
    rng = np.random.default_rng(k + 20 * stride)
    w = _weights((3, 2, k, k), k + 1, bias_q=2)
    x = rng.normal(size=(2, 12, 4, 4))
    ref = transposed_conv2d(Tensor(x), Tensor(_block_kernel(w, transposed=True)), w.bias, stride=stride, padding=pad).data
    np.testing.assert_allclose(qtransposed_conv2d_forward(Tensor(x), w, stride, pad).data, ref, atol=1e-10)


def test_qdense_block_matrix():
    w = _weights((5, 3), 9, bias_q=5)
    x = np.random.default_rng(10).normal(size=(4, 12))
    ref = x @ _block_kernel(w).T + w.bias.data
    np.testing.assert_allclose(qdense_forward(Tensor(x), w).data, ref, atol=1e-10)


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1), (1, 1, 0), (2, 2, 0)])
def test_qtconv_adjoint_of_qconv_with_conjugate_weights(k, stride, pad):
    rng = np.random.default_rng(30 + k)
    w = _weights((2, 3, k, k), 31)
    conj = QuaternionLayerWeights(w.Wa, Tensor(-w.Wb.data), Tensor(-w.Wc.data), Tensor(-w.Wd.data))
    x = rng.normal(size=(2, 12, 8, 8))
    y_fwd = qconv2d_forward(Tensor(x), w, stride, pad).data
    y = rng.normal(size=y_fwd.shape)
    back = qtransposed_conv2d_forward(Tensor(y), conj, stride, pad).data
    assert back.shape == x.shape
    lhs, rhs = np.sum(y_fwd * y), np.sum(x * back)
    assert lhs == pytest.approx(rhs, abs=1e-6 * max(1.0, abs(lhs)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 1), st.integers(0, 999))
def test_block_structure_property(qi, qo, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    size = next(s for s in range(k, k + 8) if (s + 2 * pad - k) % stride == 0)
    w = _weights((qo, qi, k, k), seed, bias_q=qo)
    x = rng.normal(size=(1, 4 * qi, size, size))
    ref = conv2d(Tensor(x), Tensor(_block_kernel(w)), w.bias, stride=stride, padding=pad).data
    np.testing.assert_allclose(qconv2d_forward(Tensor(x), w, stride, pad).data, ref, atol=1e-10)


def test_linear_stack_with_unit_slope():
    # slope -> 1 makes the activation the identity (1 itself is outside the allowed range),
    # so the stack is two block-structured maps back to back
    w1, w2 = _weights((2, 1, 3, 3), 40), _weights((1, 2, 3, 3), 41)
    x = np.random.default_rng(42).normal(size=(1, 4, 6, 6))
    h = split_leaky_relu(qconv2d_forward(Tensor(x), w1, padding=1), slope=0.999999999999)
    out = qconv2d_forward(h, w2, padding=1).data
    ref = conv2d(conv2d(Tensor(x), Tensor(_block_kernel(w1)), padding=1), Tensor(_block_kernel(w2)), padding=1).data
    np.testing.assert_allclose(out, ref, atol=1e-9)


def test_float32_matches_block_oracle():
    w = _weights((4, 2, 4, 4), 50, bias_q=4, dtype=np.float32)
    x = np.random.default_rng(51).normal(size=(2, 8, 8, 8)).astype(np.float32)
    out = qconv2d_forward(Tensor(x), w, 2, 1).data
    assert out.dtype == np.float32
    ref = conv2d(Tensor(x.astype(np.float64)), Tensor(_block_kernel(w)), Tensor(w.bias.data.astype(np.float64)), 2, 1).data
    np.testing.assert_allclose(out, ref, atol=1e-5)


# activation --------------------------------------------------------------------------------

def test_split_leaky_relu_example():
    out = split_leaky_relu(Tensor(np.array([[1.0], [-1.0], [2.0], [-2.0]]).reshape(1, 4)), 0.2)
    np.testing.assert_allclose(out.data, [[1.0, -0.2, 2.0, -0.4]])
    pos = np.abs(np.random.default_rng(0).normal(size=(3, 8)))
    np.testing.assert_array_equal(split_leaky_relu(Tensor(pos)).data, pos)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 8)))
    np.testing.assert_array_equal(split_leaky_relu(x, 0.3).data, leaky_relu(x, 0.3).data)


# gradients ---------------------------------------------------------------------------------

def test_qconv_leaky_gradients():
    w = _weights((2, 1, 4, 4), 60, bias_q=2)
    x = Tensor(np.random.default_rng(61).normal(size=(2, 4, 6, 6)), requires_grad=True)
    tgt = Tensor(np.random.default_rng(62).normal(size=(2, 8, 3, 3)))
    err = check_tensors(lambda: (split_leaky_relu(qconv2d_forward(x, w, 2, 1), 0.2) * tgt).sum(),
                        [x, *w.components, w.bias])
    assert err < 1e-4


def test_qtconv_gradients():
    w = _weights((2, 1, 4, 4), 63, bias_q=1)
    x = Tensor(np.random.default_rng(64).normal(size=(1, 8, 3, 3)), requires_grad=True)
    tgt = Tensor(np.random.default_rng(65).normal(size=(1, 4, 6, 6)))
    err = check_tensors(lambda: (qtransposed_conv2d_forward(x, w, 2, 1) * tgt).sum(), [x, *w.components, w.bias])
    assert err < 1e-4


def test_qdense_gradients():
    w = _weights((2, 3), 66, bias_q=2)
    x = Tensor(np.random.default_rng(67).normal(size=(3, 12)), requires_grad=True)
    err = check_tensors(lambda: (qdense_forward(x, w).exp()).mean(), [x, *w.components, w.bias])
    assert err < 1e-4


# shapes and errors ----------------------------------------------------------------------------

def test_channel_checks():
    with pytest.raises(ChannelNotDivisibleBy4):
        LayerSpec(LayerKind.QCONV, 6, 8, 3)
    w = _weights((1, 1, 3, 3), 0)
    with pytest.raises(ChannelNotDivisibleBy4):
        qconv2d_forward(Tensor(np.ones((1, 6, 5, 5))), w)
    with pytest.raises(ShapeMismatch):
        qconv2d_forward(Tensor(np.ones((1, 8, 5, 5))), w)


# initialisation -------------------------------------------------------------------------------

def test_init_deterministic_and_zero_bias():
    spec = LayerSpec(LayerKind.QCONV, 8, 16, 3, 1, 1)
    a, b = init_weights(spec, 5), init_weights(spec, 5)
    for (_, x), (_, y) in zip(a.named(), b.named()):
        assert x.data.tobytes() == y.data.tobytes()
    assert np.all(a.bias.data == 0)
    assert a.bias.shape == (16,)
    c = init_weights(spec, 6)
    assert not np.array_equal(a.Wa.data, c.Wa.data)


@pytest.mark.parametrize("kind", [LayerKind.QCONV, LayerKind.QTRANSPOSED_CONV, LayerKind.QDENSE])
def test_init_variance(kind):
    k = 1 if kind is LayerKind.QDENSE else 3
    cin, cout = (2048, 1024) if k == 1 else (512, 256)
    spec = LayerSpec(kind, cin, cout, k)
    w = init_weights(spec, 0)
    comps = np.stack([t.data for t in w.components])
    assert comps[0].size * 4 >= 100_000
    fan_in, fan_out = cin // 4 * k * k, cout // 4 * k * k
    gain2 = 2 / (1 + 0.2**2)
    target = gain2 / (2 * (fan_in + fan_out))
    assert init_scale(spec) ** 2 == pytest.approx(target)
    assert comps.var() == pytest.approx(target, rel=0.05)
    assert abs(comps.mean()) < 5 * math.sqrt(target / comps.size)


def test_init_real_variance():
    spec = LayerSpec(LayerKind.REAL_CONV, 128, 96, 3)
    w = init_weights(spec, 1).weight.data
    target = (2 / (1 + 0.04)) * 2 / (128 * 9 + 96 * 9)
    assert w.var() == pytest.approx(target, rel=0.05)


# parameter accounting ----------------------------------------------------------------------

def test_parameter_counts():
    assert count_parameters(LayerSpec(LayerKind.REAL_CONV, 4, 8, 3)) == 296
    assert count_parameters(LayerSpec(LayerKind.QCONV, 4, 8, 3)) == 80
    assert count_weights(LayerSpec(LayerKind.REAL_CONV, 4, 8, 3)) == 4 * count_weights(LayerSpec(LayerKind.QCONV, 4, 8, 3))
    assert count_parameters(LayerSpec(LayerKind.QDENSE, 4, 4)) == 8
    layer = Layer.create(LayerSpec(LayerKind.QCONV, 4, 8, 3), 0)
    assert layer.num_parameters() == 80


pairs = [(LayerKind.QCONV, LayerKind.REAL_CONV), (LayerKind.QTRANSPOSED_CONV, LayerKind.REAL_TRANSPOSED_CONV),
         (LayerKind.QDENSE, LayerKind.REAL_DENSE)]


@given(st.sampled_from(pairs), st.integers(1, 64), st.integers(1, 64), st.integers(1, 5))
def test_weight_ratio_is_four(pair, qi, qo, k):
    qk, rk = pair
    k = 1 if qk is LayerKind.QDENSE else k
    q, r = LayerSpec(qk, 4 * qi, 4 * qo, k), LayerSpec(rk, 4 * qi, 4 * qo, k)
    assert 4 * count_weights(q) == count_weights(r)
    assert count_parameters(r) - count_weights(r) == count_parameters(q) - count_weights(q)
    assert Layer.create(q, 0).num_parameters() == count_parameters(q)
