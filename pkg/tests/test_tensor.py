import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glyphfusion import tensor as T
from glyphfusion.errors import ArgumentError, ContractError, DimensionError
from glyphfusion.gradcheck import check_gradients, numeric_grad, relative_error
from glyphfusion.optim import Adam, AdamState, adam_step
from glyphfusion.tensor import Tensor


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def naive_matmul(a, b):
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


def naive_conv(x, k, stride, pad):
    c, h, w = x.shape
    co, ci, kh, kw = k.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                out[o, i, j] = (xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw] * k[o]).sum()
    return out


# -- matmul ---------------------------------------------------------------------------------

def test_matmul_identity_and_zero():
    x = Tensor(np.arange(9.0).reshape(3, 3))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), x).data, x.data)
    assert not T.matmul(x, Tensor(np.zeros((3, 2)))).data.any()


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    assert np.abs(T.matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b)).max() < 1e-10


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# -- conv2d ------------------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(1).standard_normal((1, 5, 5))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_window_sums():
    x = np.arange(9.0).reshape(1, 3, 3)
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 2, 2)))).data[0]
    expected = [[x[0, i:i + 2, j:j + 2].sum() for j in range(2)] for i in range(2)]
    assert np.array_equal(out, np.array(expected))


def test_conv_zero_kernel():
    x = Tensor(np.random.default_rng(2).standard_normal((2, 4, 4)))
    assert not T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), pad=1).data.any()


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv_matches_naive(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, k = rng.standard_normal((3, 7, 6)), rng.standard_normal((4, 3, 3, 2))
    got = T.conv2d(Tensor(x), Tensor(k), stride=stride, pad=pad).data
    want = naive_conv(x, k, stride, pad)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-10


def test_conv_errors():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 1, 1))))
    with pytest.raises(ArgumentError):
        T.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 1, 1))), stride=0)


# -- upsample, activations, norm -----------------------------------------------------------

def test_upsample():
    x = Tensor(np.full((1, 1, 1), 7.0), requires_grad=True)
    assert np.array_equal(T.upsample2d(x, 1).data, x.data)
    up = T.upsample2d(x, 2)
    assert np.array_equal(up.data, np.full((1, 2, 2), 7.0))
    with pytest.raises(ArgumentError):
        T.upsample2d(x, 0)


def test_upsample_gradient_block_sum():
    x = leaf(np.random.default_rng(3), 2, 3, 3)
    T.upsample2d(x, 2).sum().backward()
    assert np.array_equal(x.grad, np.full(x.shape, 4.0))
    num = numeric_grad(lambda: T.upsample2d(x, 2).sum(), x)
    assert relative_error(x.grad, num) < 1e-8


def test_sigmoid_and_relu():
    assert T.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    x = Tensor(np.array([1.5, 2.0]), requires_grad=True)
    out = T.relu(-x)
    assert not out.data.any()
    out.sum().backward()
    assert not x.grad.any()
    with pytest.raises(ArgumentError):
        T.activation(x, "gelu")


def test_silu_gradient_pointwise():
    x = leaf(np.random.default_rng(4), 20, scale=3)
    T.silu(x).sum().backward()
    num = numeric_grad(lambda: T.silu(x).sum(), x)
    assert np.abs(x.grad - num).max() < 1e-5


def test_sigmoid_extreme_inputs_finite():
    out = T.sigmoid(Tensor(np.array([-1e4, 1e4])))
    assert np.array_equal(out.data, [0.0, 1.0])
    assert np.isfinite(T.log_sigmoid(Tensor(np.array([-1e4, 1e4]))).data).all()


def test_group_norm_cases():
    c = 4
    gamma, beta = Tensor(np.ones(c)), Tensor(np.zeros(c))
    const = T.group_norm(Tensor(np.full((c, 3, 3), 2.5)), 2, gamma, beta)
    assert np.abs(const.data).max() == 0.0
    rng = np.random.default_rng(5)
    x = rng.standard_normal((c, 5, 5)) * 3 + 1
    b = rng.standard_normal(c)
    out = T.group_norm(Tensor(x), 2, Tensor(np.ones(c)), Tensor(b)).data
    for g in range(2):
        chans = slice(2 * g, 2 * g + 2)
        shifted = out[chans] - b[chans, None, None]
        assert abs(shifted.mean()) < 1e-5
        assert abs(shifted.var() - x[chans].var() / (x[chans].var() + 1e-5)) < 1e-5
    zero_gamma = T.group_norm(Tensor(x), 4, Tensor(np.zeros(c)), Tensor(b)).data
    assert np.array_equal(zero_gamma, np.broadcast_to(b[:, None, None], x.shape))
    with pytest.raises(ArgumentError):
        T.group_norm(Tensor(x), 3, gamma, beta)


# -- backward ------------------------------------------------------------------------------

def test_backward_square():
    x = Tensor(np.array(3.0), requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0


def test_backward_independent_leaf():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    (y * 2).sum().backward()
    assert x.grad is None or not np.any(x.grad)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_gradient_accumulates_through_shared_node():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = x * x
    (y + y * 3).backward()
    assert x.grad == pytest.approx(16.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = x * 3
    assert not y.requires_grad


def test_two_layer_conv_net_gradcheck():
    rng = np.random.default_rng(6)
    x = leaf(rng, 2, 6, 6)
    k1, b1 = leaf(rng, 3, 2, 3, 3, scale=0.5), leaf(rng, 3)
    k2 = leaf(rng, 2, 3, 3, 3, scale=0.5)

    def loss():
        h = T.silu(T.conv2d(x, k1, b1, pad=1))
        return (T.conv2d(h, k2, stride=2) ** 2).mean()

    assert max(check_gradients(loss, [x, k1, b1, k2])) < 1e-3


OP_CASES = {
    "add": lambda a, b: (a + b * 1.5).sum(),
    "sub": lambda a, b: (a - b).sum() * 2,
    "mul_broadcast": lambda a, b: (a * b[0:1]).sum(),
    "div": lambda a, b: (a / (T.exp(b) + 1)).sum(),
    "power": lambda a, b: ((a * a + 1) ** 1.5).sum(),
    "exp_log": lambda a, b: T.log(T.exp(a) + T.exp(b)).sum(),
    "sqrt": lambda a, b: T.sqrt(a * a + 0.5).sum(),
    "clamp": lambda a, b: (T.clamp(a, -0.3, 0.4) * b).sum(),
    "mean_axis": lambda a, b: (T.mean(a * b, axis=1) ** 2).sum(),
    "reshape_transpose": lambda a, b: (T.transpose(T.reshape(a, (3, 4))) @ T.reshape(b, (3, 4))).sum(),
    "getitem": lambda a, b: (a[1:, ::2] * b[:2, 1::2]).sum(),
    "concat_stack": lambda a, b: (T.concat([a, b], 0) ** 2).sum() + T.stack([a, b], 1).mean(),
    "matmul": lambda a, b: (T.matmul(a, T.transpose(b)) ** 2).sum(),
    "linear": lambda a, b: T.linear(a, b, b[0, :3]).sum(),
    "relu": lambda a, b: (T.relu(a) * b).sum(),
    "sigmoid": lambda a, b: (T.sigmoid(a) * b).sum(),
    "tanh": lambda a, b: (T.tanh(a) * b).sum(),
    "silu": lambda a, b: (T.silu(a) * b).sum(),
    "softplus": lambda a, b: T.softplus(a * 3).sum(),
    "log_sigmoid": lambda a, b: T.log_sigmoid(a * 2 - b).sum(),
    "log_softmax": lambda a, b: (T.log_softmax(a, axis=1) * b).sum(),
    "cross_entropy": lambda a, b: T.cross_entropy(a * b, [0, 3, 1]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_elementwise_op_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    assert max(check_gradients(lambda: OP_CASES[name](a, b), [a, b])) < 1e-3


SPATIAL_CASES = {
    "conv_stride2_pad1": lambda x, k: T.conv2d(x, k, stride=2, pad=1).sum(),
    "upsample": lambda x, k: (T.upsample2d(x, 2) ** 2).sum(),
    "pixel_unshuffle": lambda x, k: (T.pixel_unshuffle(x, 2) * T.pixel_unshuffle(x, 2)[:, :1]).sum(),
    "pixel_shuffle": lambda x, k: (T.pixel_shuffle(T.concat([x, x * 2, x, x], 1), 2) ** 2).sum(),
    "avg_pool": lambda x, k: (T.avg_pool2d(x, 2) ** 3).sum(),
    "group_norm": lambda x, k: (T.group_norm(x, 1, k[0, :, 0, 0], k[1, :, 1, 1]) ** 2).mean(),
}


@pytest.mark.parametrize("name", sorted(SPATIAL_CASES))
def test_spatial_op_gradients(name):
    rng = np.random.default_rng(len(name))
    x, k = leaf(rng, 2, 2, 4, 4), leaf(rng, 2, 2, 3, 3)
    assert max(check_gradients(lambda: SPATIAL_CASES[name](x, k), [x, k])) < 1e-3


@settings(max_examples=25, deadline=None)
@given(c_in=st.integers(1, 3), c_out=st.integers(1, 3), size=st.integers(3, 7),
       k=st.integers(1, 3), stride=st.integers(1, 2), pad=st.integers(0, 1),
       seed=st.integers(0, 2**16))
def test_conv_gradients_random_shapes(c_in, c_out, size, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x, kern = leaf(rng, c_in, size, size), leaf(rng, c_out, c_in, k, k)
    errs = check_gradients(lambda: (T.conv2d(x, kern, stride=stride, pad=pad) ** 2).sum(), [x, kern])
    assert max(errs) < 1e-3


# -- dtype ---------------------------------------------------------------------------------

def test_float32_graph_stays_float32():
    with T.default_dtype(np.float32):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = (x * 0.5 + 1.0) / 3.0
        assert y.dtype == np.float32
        y.sum().backward()
        assert x.grad.dtype == np.float32
    assert T.get_default_dtype() == np.float64


# -- Adam ----------------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = AdamState.like(p)
    adam_step(p, np.zeros(2), st_, 0.1)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert st_.step_count == 1


def test_adam_first_step_is_signed_lr():
    p = Tensor(np.zeros(3), requires_grad=True)
    adam_step(p, np.array([0.3, -5.0, 2e-3]), AdamState.like(p), 0.01)
    assert np.allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_scalar_trace():
    grads = [0.5, -1.0, 0.25, 2.0, -0.75]
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    theta, m, v = 1.0, 0.0, 0.0
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamState.like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        adam_step(p, np.array([g]), state, lr)
    assert abs(p.data[0] - theta) < 1e-10
    assert state.step_count == 5


def test_adam_errors():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ContractError):
        adam_step(p, np.zeros(2), AdamState.like(p), 0.1)
    p.frozen = True
    with pytest.raises(ContractError):
        adam_step(p, np.zeros(3), AdamState.like(p), 0.1)
    with pytest.raises(ContractError):
        Adam([p], lr=0.1)


def test_item_requires_single_element():
    assert Tensor(np.array([2.5])).item() == 2.5
    with pytest.raises(ContractError):
        Tensor(np.ones(2)).item()
