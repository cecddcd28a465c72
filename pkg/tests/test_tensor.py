import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobilemamba import tensor as T
from mobilemamba.tensor import BatchNormParams, ConvSpec, ShapeError

from conftest import naive_conv2d


def test_conv_zero_input():
    w = np.random.default_rng(0).normal(size=(1, 1, 3, 3)).astype(np.float32)
    out = T.conv2d(np.zeros((1, 1, 3, 3), np.float32), w, spec=ConvSpec(3, 1, 1))
    assert np.array_equal(out, np.zeros((1, 1, 3, 3)))


def test_conv_ones_depthwise_counts_taps():
    out = T.conv2d(np.ones((1, 1, 3, 3), np.float32), np.ones((1, 1, 3, 3), np.float32), spec=ConvSpec(3, 1, 1, 1))
    expect = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], np.float32)
    assert np.array_equal(out[0, 0], expect)


def test_conv_delta_kernel_is_identity(rng):
    x = rng.normal(size=(2, 5, 4, 3)).astype(np.float32)
    w = np.ones((5, 1, 1, 1), np.float32)
    assert np.array_equal(T.conv2d(x, w, spec=ConvSpec(1, groups=5)), x)


@pytest.mark.parametrize("k,s,p,g,cin,cout", [
    (3, 1, 1, 1, 3, 4), (3, 2, 1, 1, 2, 3), (1, 1, 0, 1, 4, 6), (5, 1, 2, 4, 4, 4),
    (3, 2, 1, 6, 6, 6), (3, 1, 0, 2, 4, 6), (7, 1, 3, 3, 3, 3), (1, 2, 0, 1, 3, 5),
])
def test_conv_matches_naive_oracle(rng, k, s, p, g, cin, cout):
    x = rng.normal(size=(2, cin, 6, 5)).astype(np.float32)
    w = rng.normal(size=(cout, cin // g, k, k)).astype(np.float32)
    b = rng.normal(size=cout).astype(np.float32)
    got = T.conv2d(x, w, b, ConvSpec(k, s, p, g))
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, s, p, g), atol=1e-5)


def test_conv_errors(rng):
    x = rng.normal(size=(1, 4, 5, 5)).astype(np.float32)
    with pytest.raises(ShapeError, match="in-channels"):
        T.conv2d(x, np.zeros((2, 3, 3, 3), np.float32), spec=ConvSpec(3, 1, 1))
    with pytest.raises(ShapeError, match="divisible"):
        T.conv2d(x, np.zeros((3, 2, 3, 3), np.float32), spec=ConvSpec(3, 1, 1, 2))
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 1, 2, 2), np.float32), np.zeros((1, 1, 5, 5), np.float32), spec=ConvSpec(5))
    with pytest.raises(ShapeError, match="bias"):
        T.conv2d(x, np.zeros((2, 4, 1, 1), np.float32), np.zeros(3, np.float32), ConvSpec(1))


def test_convspec_validation():
    with pytest.raises(ValueError):
        ConvSpec(kernel=2)
    with pytest.raises(ValueError):
        ConvSpec(kernel=3, stride=0)
    assert ConvSpec(3, 2, 1).out_size(7) == 4
    assert ConvSpec(3, 2, 1).out_size(12) == 6


small = st.integers(1, 4)


@given(n=st.integers(1, 2), c=small, o=small, h=small, w=small, k=st.sampled_from([1, 3]),
       seed=st.integers(0, 2**31))
def test_conv_groups1_is_sum_of_per_channel_depthwise(n, c, o, h, w, k, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, c, h, w)).astype(np.float32)
    wt = r.normal(size=(o, c, k, k)).astype(np.float32)
    spec = ConvSpec(k, 1, k // 2)
    full = T.conv2d(x, wt, spec=spec)
    acc = np.zeros_like(full, dtype=np.float64)
    for ci in range(c):
        xi = np.repeat(x[:, ci:ci + 1], o, axis=1)
        acc += T.conv2d(xi, wt[:, ci:ci + 1], spec=ConvSpec(k, 1, k // 2, groups=o))
    np.testing.assert_allclose(full, acc, atol=1e-5)
    np.testing.assert_allclose(full, naive_conv2d(x, wt, None, 1, k // 2), atol=1e-5)


@given(seed=st.integers(0, 2**31), a=st.floats(-2, 2), b=st.floats(-2, 2),
       g=st.sampled_from([1, 2]), s=st.sampled_from([1, 2]))
def test_conv_linearity(seed, a, b, g, s):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 1, 4, 4, 4)).astype(np.float32)
    w = r.normal(size=(4, 4 // g, 3, 3)).astype(np.float32)
    spec = ConvSpec(3, s, 1, g)
    lhs = T.conv2d(np.float32(a) * x + np.float32(b) * y, w, spec=spec)
    rhs = np.float32(a) * T.conv2d(x, w, spec=spec) + np.float32(b) * T.conv2d(y, w, spec=spec)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_linear_examples():
    np.testing.assert_array_equal(T.linear([1, 2], np.eye(2), [0, 0]), [1, 2])
    np.testing.assert_allclose(T.linear([1, 2], [[1, 1], [2, -1]], [0.5, 0]), [3.5, 0])
    for x in ([1.0], [-3.0], [1e6]):
        np.testing.assert_array_equal(T.linear(x, np.zeros((1, 1)), [7]), [7])
    with pytest.raises(ShapeError):
        T.linear([1, 2, 3], np.eye(2))


def test_linear_matches_matmul_on_strided_views(rng):
    x = rng.normal(size=(3, 7, 5)).astype(np.float32)
    w = rng.normal(size=(4, 5)).astype(np.float32)
    view = x[:, ::-1]
    np.testing.assert_allclose(T.linear(view, w), np.einsum("nlc,oc->nlo", view, w), atol=1e-5)


def test_batchnorm_examples(rng):
    x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    ident = BatchNormParams(np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    assert np.array_equal(T.batchnorm2d(x, ident), x)
    p = BatchNormParams([3.0], [1.0], [0.0], [1.0], eps=0.0)
    assert T.batchnorm2d(np.full((1, 1, 1, 1), 2.0, np.float32), p).item() == 7.0
    z = BatchNormParams(np.zeros(3), np.full(3, 5.0), rng.normal(size=3), np.ones(3))
    assert np.all(T.batchnorm2d(x, z) == 5.0)


def test_batchnorm_default_identity_is_bit_exact(rng):
    x = rng.normal(size=(2, 6, 3, 5)).astype(np.float32) * 100
    assert np.array_equal(T.batchnorm2d(x, BatchNormParams.identity(6, eps=0.0)), x)


def test_batchnorm_errors():
    with pytest.raises(ValueError):
        T.batchnorm2d(np.zeros((1, 1, 1, 1), np.float32), BatchNormParams([1.0], [0.0], [0.0], [0.0], eps=0.0))
    with pytest.raises(ValueError):
        BatchNormParams([1.0, 1.0], [0.0], [0.0], [1.0])
    with pytest.raises(ShapeError):
        T.batchnorm2d(np.zeros((1, 2, 1, 1), np.float32), BatchNormParams.identity(3))


def test_activations():
    assert T.silu(0.0) == 0.0
    assert abs(float(T.silu(1.0)) - 1 / (1 + math.exp(-1))) < 1e-6
    assert abs(float(T.silu(1.0)) - 0.731059) < 1e-6
    assert T.gelu(0.0) == 0.0
    # tanh-form gelu against its closed form in float64
    xs = np.linspace(-6, 6, 101)
    ref = 0.5 * xs * (1 + np.tanh(math.sqrt(2 / math.pi) * (xs + 0.044715 * xs**3)))
    np.testing.assert_allclose(T.gelu(xs), ref, atol=1e-6)
    big = np.array([-1e4, 1e4], np.float32)
    assert np.all(np.isfinite(T.silu(big))) and np.all(np.isfinite(T.softplus(big)))
    np.testing.assert_allclose(T.softplus([0.0]), [math.log(2)], rtol=1e-6)


def test_split_concat_examples(rng):
    x = rng.normal(size=(1, 10, 2, 2)).astype(np.float32)
    (only,) = T.split_channels(x, [10])
    assert np.array_equal(only, x)
    parts = T.split_channels(x, [6, 3, 1])
    assert [p.shape[1] for p in parts] == [6, 3, 1]
    assert np.array_equal(T.concat_channels(parts), x)
    with pytest.raises(ShapeError):
        T.split_channels(x, [6, 3, 2])
    with pytest.raises(ShapeError):
        T.split_channels(x, [12, -2])


@given(c=st.integers(1, 24), cuts=st.lists(st.integers(0, 24), max_size=5), seed=st.integers(0, 99))
def test_split_concat_roundtrip_property(c, cuts, seed):
    bounds = sorted({min(v, c) for v in cuts} | {0, c})
    sizes = [b - a for a, b in zip(bounds, bounds[1:])]
    x = np.random.default_rng(seed).normal(size=(2, c, 3, 2)).astype(np.float32)
    assert np.array_equal(T.concat_channels(T.split_channels(x, sizes)), x)


def test_global_avg_pool():
    assert T.global_avg_pool(np.full((1, 2, 3, 3), 4.5, np.float32)).ravel().tolist() == [4.5, 4.5]
    assert np.all(T.global_avg_pool(np.zeros((2, 3, 2, 2), np.float32)) == 0)
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2)
    assert T.global_avg_pool(x).shape == (1, 1, 1, 1)
    assert T.global_avg_pool(x).item() == 2.5


def test_as_tensor_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        T.as_tensor(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeError):
        T.as_tensor(np.zeros((1, 0, 2, 2)))
