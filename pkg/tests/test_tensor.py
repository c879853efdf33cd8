import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from priorfuse import oracles as O
from priorfuse import tensor as T
from priorfuse.errors import DimensionError, ParameterError
from priorfuse.gradcheck import grad_check
from priorfuse.tensor import Tensor, no_grad

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_conv_sum_of_ones():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), np.ones((1, 1, 3, 3)))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 4, 5))
    out = T.conv2d(Tensor(x), np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = T.conv2d(Tensor(x), w, b, padding=1).data
    assert np.max(np.abs(got - O.loop_conv2d(x, w, b, 1, 1))) < 1e-6


@pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (2, 1, 1), (1, 1, 2), (2, 0, 4)])
def test_conv_geometry_and_groups(rng, stride, padding, groups):
    x = rng.standard_normal((2, 4, 7, 6))
    w = rng.standard_normal((4, 4 // groups, 3, 3))
    got = T.conv2d(Tensor(x), w, None, stride, padding, groups).data
    assert got.shape == (2, 4, (7 + 2 * padding - 3) // stride + 1, (6 + 2 * padding - 3) // stride + 1)
    np.testing.assert_allclose(got, O.loop_conv2d(x, w, None, stride, padding, groups), atol=1e-12)


def test_conv_errors_name_axis():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    with pytest.raises(DimensionError, match="channel axis"):
        T.conv2d(x, np.zeros((2, 2, 3, 3)))
    with pytest.raises(DimensionError, match="height"):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 4))), np.zeros((1, 1, 3, 3)))
    with pytest.raises(DimensionError, match="groups"):
        T.conv2d(x, np.zeros((2, 1, 3, 3)), groups=2)


def test_matmul_examples():
    a = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(2)[None])).data, a)
    np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(a)).data, [[[7, 10], [15, 22]]])


def test_matmul_oracle_and_error(rng):
    a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 5, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, O.loop_matmul(a, b), atol=1e-12)
    with pytest.raises(DimensionError, match="inner dimension"):
        T.matmul(Tensor(a), Tensor(a))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor(np.array([1.0, 2.0, 3.0]))).data,
                               [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(4))).data, 0.25)
    with pytest.raises(ParameterError):
        T.softmax(Tensor(np.zeros(3)), temperature=0.0)


def test_softmax_is_shift_invariant_and_stable():
    x = np.array([1000.0, 1001.0, 1002.0])
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, T.softmax(Tensor(x - 1000)).data, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=finite), st.floats(0.1, 5.0))
def test_softmax_simplex(x, tau):
    y = T.softmax(Tensor(x), axis=-1, temperature=tau).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    for row, ref in zip(y, x):
        np.testing.assert_allclose(row, O.loop_softmax(ref / tau), atol=1e-12)


def test_topk_softmax_examples():
    y = T.topk_softmax(Tensor(np.array([3.0, 2.0, 1.0, 0.0])), 2).data
    np.testing.assert_allclose(y, [0.7310586, 0.2689414, 0.0, 0.0], atol=1e-7)
    # ties go to the lower index
    y = T.topk_softmax(Tensor(np.array([1.0, 1.0, 1.0])), 1).data
    np.testing.assert_array_equal(y, [1.0, 0.0, 0.0])
    with pytest.raises(ParameterError):
        T.topk_softmax(Tensor(np.zeros(3)), 4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite), st.integers(1, 5))
def test_topk_count_and_sum(x, k):
    y = T.topk_softmax(Tensor(x), k, axis=-1).data
    assert np.all((y > 0).sum(axis=-1) <= k)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_topk_full_equals_softmax(rng):
    x = rng.standard_normal((4, 6))
    np.testing.assert_allclose(T.topk_softmax(Tensor(x), 6).data, T.softmax(Tensor(x)).data, atol=1e-15)


def test_layer_norm_examples(rng):
    y = T.layer_norm(Tensor(np.array([1.0, 2.0, 3.0])), eps=0.0).data
    np.testing.assert_allclose(y, [-1.2247449, 0.0, 1.2247449], atol=1e-7)
    x, g, s = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
    np.testing.assert_allclose(T.layer_norm(Tensor(x), Tensor(g), Tensor(s)).data,
                               O.loop_layer_norm(x, g, s, 1e-5), atol=1e-12)


def test_layer_norm_channel_axis(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    y = T.layer_norm(Tensor(x), axis=1, eps=1e-12).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-9)


def test_gelu_values():
    y = T.gelu(Tensor(np.array([-2.0, 0.0, 2.0]))).data
    np.testing.assert_allclose(y, [-0.0454023, 0.0, 1.9545977], atol=1e-6)


def test_sigmoid_open_interval():
    y = T.sigmoid(Tensor(np.array([-50.0, 0.0, 50.0]))).data
    assert y[1] == 0.5 and 0.0 <= y[0] < 1e-20 and y[2] <= 1.0


def test_sobel_constant_and_ramp():
    assert np.all(T.sobel_gradient(Tensor(np.full((1, 1, 5, 5), 0.3))).data == 0)
    x = np.random.default_rng(0).standard_normal((1, 2, 5, 6))
    kernel = np.tile(np.stack([T.SOBEL_X, T.SOBEL_Y])[:, None], (2, 1, 1, 1))
    ref = np.abs(O.loop_conv2d(np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge"), kernel, groups=2))
    np.testing.assert_allclose(T.sobel_gradient(Tensor(x)).data, ref[:, 0::2] + ref[:, 1::2], atol=1e-12)
    ramp = np.tile(np.arange(5.0), (5, 1))[None, None]
    g = T.sobel_gradient(Tensor(ramp)).data[0, 0]
    np.testing.assert_allclose(g[:, 1:-1], 8.0)   # |Gx| = 8 per unit slope, Gy = 0
    np.testing.assert_allclose(g[:, 0], 4.0)      # replicate padding halves the edge difference
    with pytest.raises(DimensionError):
        T.sobel_gradient(Tensor(np.zeros((1, 1, 2, 5))))


def test_upsample_and_pads():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    np.testing.assert_array_equal(T.upsample_nearest2x(x).data[0, 0],
                                  [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])
    assert T.pad2d(x, 1).data[0, 0, 0].tolist() == [0, 0, 0, 0]
    assert T.replicate_pad2d(x, 1).data[0, 0, 0].tolist() == [0, 0, 1, 1]


def test_float32_is_preserved(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 2, 3, 3)).astype(np.float32))
    y = T.gelu(T.layer_norm(T.conv2d(x, w, padding=1) * np.float64(0.5), axis=1))
    y = T.softmax(y, axis=1, temperature=0.7)
    assert y.dtype == np.float32
    T.tsum(y * y).backward()
    assert x.grad.dtype == np.float32


def test_backward_accumulates_shared_inputs():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x * 3.0
    y.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [7.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y._backward is None and not y._parents


@pytest.mark.parametrize("name,fn,shape", [
    ("conv", lambda t: T.conv2d(t, np.linspace(-1, 1, 18).reshape(2, 1, 3, 3), padding=1), (1, 1, 4, 4)),
    ("unfold", lambda t: T.unfold(t, 3, 2, 1), (1, 2, 5, 5)),
    ("layer_norm", lambda t: T.layer_norm(t, axis=1), (1, 3, 2, 2)),
    ("topk", lambda t: T.topk_softmax(t, 2, axis=1), (1, 4, 2, 2)),
    ("maximum", lambda t: T.maximum(t, np.zeros((2, 3)) + 0.1), (2, 3)),
])
def test_op_gradients(rng, name, fn, shape):
    x = Tensor(rng.standard_normal(shape))
    w = rng.standard_normal(fn(Tensor(x.data.copy())).shape)
    assert grad_check(lambda t: T.tsum(fn(t) * w), x, h=1e-6) < 1e-6, name
