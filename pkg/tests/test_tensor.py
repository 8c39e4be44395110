import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from temrnn import tensor as tc
from temrnn.gradcheck import numeric_gradient, relative_error


def test_conv2d_scalar_kernel_scales():
    y, _ = tc.conv2d(np.ones((1, 3, 3)), np.full((1, 1, 1, 1), 2.0), np.zeros(1))
    assert y.shape == (1, 3, 3)
    assert np.all(y == 2.0)


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv2d_identity_kernel_is_bit_exact(padding):
    x = np.random.default_rng(0).normal(size=(1, 5, 7))
    y, _ = tc.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1), padding=padding)
    assert np.array_equal(y, x)


def test_conv2d_hand_sum():
    y, _ = tc.conv2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.ones((1, 1, 2, 2)), np.zeros(1))
    assert y.tolist() == [[[10.0]]]


def test_conv2d_same_keeps_spatial_shape():
    y, _ = tc.conv2d(np.zeros((2, 3, 6, 5)), np.zeros((4, 3, 3, 3)), np.zeros(4), padding="same")
    assert y.shape == (2, 4, 6, 5)


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(1)
    x, k, b = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 2)), rng.normal(size=4)
    y, _ = tc.conv2d(x, k, b)
    ref = np.zeros((2, 4, 4, 4))
    for n in range(2):
        for o in range(4):
            for i in range(4):
                for j in range(4):
                    ref[n, o, i, j] = np.sum(x[n, :, i:i + 3, j:j + 2] * k[o]) + b[o]
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_shape_errors_name_axes():
    with pytest.raises(tc.DimensionError, match="channel"):
        tc.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 1, 1)), np.zeros(1))
    with pytest.raises(tc.DimensionError, match="H/W"):
        tc.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))


def test_conv1d_examples():
    x = np.array([[1.0, 2.0, 3.0]])
    y, _ = tc.conv1d(x, np.ones((1, 1, 1)), np.zeros(1))
    assert y.tolist() == [[1.0, 2.0, 3.0]]
    y, _ = tc.conv1d(x, np.ones((1, 1, 2)), np.zeros(1))
    assert y.tolist() == [[3.0, 5.0]]
    y, _ = tc.conv1d(np.zeros((1, 3)), np.array([[[0.3, -2.0]]]), np.array([1.5]), padding="same")
    assert y.tolist() == [[1.5, 1.5, 1.5]]


def test_dense_examples():
    x = np.array([2.0, 3.0])
    assert np.array_equal(tc.dense(x, np.eye(2), np.zeros(2))[0], x)
    assert tc.dense(x, np.array([[1.0, 1.0]]), np.array([1.0]))[0].tolist() == [6.0]
    assert tc.dense(x, np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))[0].tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(tc.DimensionError):
        tc.dense(x, np.zeros((2, 3)), np.zeros(2))


def test_elementwise_values():
    assert tc.elementwise("sigmoid", np.zeros(1))[0][0] == 0.5
    assert tc.elementwise("tanh", np.zeros(1))[0][0] == 0.0
    assert tc.elementwise("hadamard", [2.0, 3.0], [4.0, 5.0])[0].tolist() == [8.0, 15.0]
    with pytest.raises(tc.DimensionError):
        tc.elementwise("add", np.zeros(2), np.zeros(3))


def test_sigmoid_backward_at_zero():
    _, rec = tc.elementwise("sigmoid", np.zeros(1))
    assert tc.backward(rec, np.ones(1))[0][0] == 0.25


def test_hadamard_backward_is_product_rule():
    _, rec = tc.elementwise("hadamard", [3.0], [5.0])
    ga, gb = tc.backward(rec, np.array([2.0]))
    assert (ga[0], gb[0]) == (10.0, 6.0)


def test_backward_without_cache_is_contract_error():
    with pytest.raises(tc.ContractError):
        tc.backward(tc.Record("conv2d", {}), np.zeros(1))
    with pytest.raises(tc.ContractError):
        tc.backward(None, np.zeros(1))


def _fd_check(forward, inputs, seed=0, points=None):
    """Finite-difference check of every input of ``forward`` against its backward rule."""
    rng = np.random.default_rng(seed)
    out, rec = forward(*inputs)
    w = rng.normal(size=np.shape(out))
    grads = tc.backward(rec, w)
    for arr, g in zip(inputs, grads):
        idx = list(np.ndindex(arr.shape))
        if points is not None and len(idx) > points:
            idx = [idx[i] for i in rng.choice(len(idx), points, replace=False)]
        num = numeric_gradient(lambda: float(np.sum(forward(*inputs)[0] * w)), arr, idx)
        ana = np.array([g[i] for i in idx])
        assert relative_error(ana, num) < 1e-6


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv2d_gradients(padding):
    rng = np.random.default_rng(2)
    inputs = [rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(2, 3, 3, 2)), rng.normal(size=2)]
    _fd_check(lambda x, k, b: tc.conv2d(x, k, b, padding), inputs)


@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv1d_gradients(padding):
    rng = np.random.default_rng(3)
    inputs = [rng.normal(size=(2, 5, 12)), rng.normal(size=(3, 5, 5)), rng.normal(size=3)]
    _fd_check(lambda x, k, b: tc.conv1d(x, k, b, padding), inputs)


def test_dense_and_pool_gradients():
    rng = np.random.default_rng(4)
    _fd_check(tc.dense, [rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)])
    _fd_check(tc.maxpool2d, [rng.normal(size=(2, 3, 6, 5))])


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "exp", "relu"])
def test_unary_gradients_at_100_points(kind):
    x = np.random.default_rng(5).normal(size=100)
    _fd_check(lambda a: tc.elementwise(kind, a), [x])


@pytest.mark.parametrize("kind", ["hadamard", "add"])
def test_binary_gradients(kind):
    rng = np.random.default_rng(6)
    _fd_check(lambda a, b: tc.elementwise(kind, a, b), [rng.normal(size=10), rng.normal(size=10)])


def test_dropout_identity_cases():
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(tc.dropout(x, 0.0, np.random.default_rng(1), True)[0], x)
    assert np.array_equal(tc.dropout(x, 0.9, np.random.default_rng(1), False)[0], x)
    with pytest.raises(ValueError):
        tc.dropout(x, 1.0, np.random.default_rng(1), True)


def test_dropout_rate_within_binomial_bound():
    n = 10_000
    y, _ = tc.dropout(np.ones(n), 0.5, np.random.default_rng(123), True)
    zeros = np.mean(y == 0)
    assert abs(zeros - 0.5) < 3 * np.sqrt(0.25 / n)
    assert set(np.unique(y)) == {0.0, 2.0}


def test_spatial_dropout_zeros_whole_channels():
    y, rec = tc.dropout(np.ones((8, 20, 3, 3)), 0.5, np.random.default_rng(0), True, spatial=True)
    per_channel = y.reshape(8, 20, -1)
    assert np.all(per_channel.min(axis=2) == per_channel.max(axis=2))
    g = tc.backward(rec, np.ones_like(y))[0]
    assert np.array_equal(g, y)


def test_dropout_is_deterministic_in_rng_state():
    x = np.ones((50,))
    a = tc.dropout(x, 0.3, np.random.default_rng(9), True)[0]
    b = tc.dropout(x, 0.3, np.random.default_rng(9), True)[0]
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_pointwise_outputs_finite(values):
    x = np.array(values)
    for kind in ("sigmoid", "tanh", "relu"):
        assert np.all(np.isfinite(tc.elementwise(kind, x)[0]))
