import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandwich_unet.errors import ShapeError
from sandwich_unet.nn import (
    CLAMP_HI,
    CLAMP_LO,
    AReLUParams,
    ConvSpec,
    arelu,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2d,
    relu,
    slice_channels,
)
from sandwich_unet.tensor import Tensor, backward, check_gradients, gradient_check_details, mul, sigmoid_array, tsum


def params(alpha, beta, grad=False):
    return AReLUParams(Tensor(np.array(alpha, dtype=float), requires_grad=grad), Tensor(np.array(beta, dtype=float), requires_grad=grad))


def weighted_sum(t, w):
    return tsum(mul(t, Tensor(w)))


def brute_conv(x, w, b):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    r = k // 2
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            y, x_ = i + di - r, j + dj - r
                            if 0 <= y < h and 0 <= x_ < wd:
                                acc += w[o, c, di, dj] * x[c, y, x_]
                out[o, i, j] = acc
    return out


# relu ------------------------------------------------------------------------


def test_relu_values():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(Tensor(-np.arange(1.0, 5.0))).data, np.zeros(4))


def test_relu_gradient():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    backward(tsum(relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_relu_gradient_zero_at_kink():
    x = Tensor([0.0], requires_grad=True)
    backward(tsum(relu(x)))
    assert x.grad[0] == 0.0


# arelu -----------------------------------------------------------------------


def test_arelu_negative_branch():
    assert arelu(Tensor([-2.0]), params(0.5, 7.0)).item() == -1.0


def test_arelu_positive_branch_sigmoid_half():
    assert arelu(Tensor([2.0]), params(-3.0, 0.0)).item() == 3.0


def test_arelu_clamp_saturation():
    assert arelu(Tensor([-1.0]), params(1.5, 0.0)).item() == -0.99


def test_arelu_beta_gradient_value():
    p = params(0.5, 0.0, grad=True)
    backward(tsum(arelu(Tensor([2.0]), p)))
    assert abs(p.beta.grad.item() - 0.5) < 1e-12
    # finite-difference confirmation
    h = 1e-6
    f = lambda b: arelu(Tensor([2.0]), params(0.5, b)).item()
    assert abs((f(h) - f(-h)) / (2 * h) - 0.5) < 1e-6


def test_arelu_gradient_contract():
    x = Tensor([-2.0, 3.0], requires_grad=True)
    p = params(0.3, 0.4, grad=True)
    backward(tsum(arelu(x, p)))
    s = float(sigmoid_array(np.asarray(0.4)))
    np.testing.assert_allclose(x.grad, [0.3, 1.0 + s])
    assert p.alpha.grad.item() == -2.0
    np.testing.assert_allclose(p.beta.grad.item(), 3.0 * s * (1 - s))


def test_arelu_alpha_gradient_zero_when_clamped():
    for a in (CLAMP_HI, 1.5, CLAMP_LO, -0.2):
        p = params(a, 0.0, grad=True)
        backward(tsum(arelu(Tensor([-2.0]), p)))
        assert p.alpha.grad.item() == 0.0


def test_arelu_zero_at_zero():
    assert arelu(Tensor([0.0]), params(0.9, 0.9)).item() == 0.0


def test_arelu_needs_scalar_params():
    with pytest.raises(ShapeError):
        arelu(Tensor([1.0]), AReLUParams(Tensor([0.5, 0.5]), Tensor(0.0)))


def test_arelu_params_ranges():
    for a in (-10.0, 0.5, 10.0):
        assert CLAMP_LO <= params(a, 0.0).negative_slope <= CLAMP_HI
    for b in (-30.0, 0.0, 30.0):
        assert 1.0 <= params(0.5, b).positive_gain <= 2.0
    assert 1.0 < params(0.5, 3.0).positive_gain < 2.0


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=12),
    st.floats(-3, 3),
    st.floats(-6, 6),
)
def test_arelu_properties(xs, a, b):
    x = np.sort(np.array(xs))
    p = params(a, b)
    out = arelu(Tensor(x), p).data
    slope = min(max(a, CLAMP_LO), CLAMP_HI)
    gain = 1.0 + 1.0 / (1.0 + np.exp(-b))
    # decomposition: relu part plus attention part
    relu_part = np.maximum(x, 0.0)
    attention = np.where(x <= 0, slope * x, (gain - 1.0) * x)
    np.testing.assert_allclose(out, relu_part + attention, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(out) >= 0)
    pos, neg = x >= 0, x <= 0
    assert np.all(out[pos] >= x[pos])
    assert np.all(out[neg] <= 0) and np.all(out[neg] >= 0.99 * x[neg] - 1e-12)


def test_arelu_gradients_by_finite_differences(rng):
    x = rng.uniform(0.1, 1.0, (2, 3, 3)) * rng.choice([-1, 1], (2, 3, 3))
    w = rng.standard_normal(x.shape)
    a0, b0 = 0.4, 0.3
    assert check_gradients(lambda t: weighted_sum(arelu(t, params(a0, b0)), w), x) < 1e-6
    assert check_gradients(lambda t: weighted_sum(arelu(Tensor(x), AReLUParams(t, Tensor(np.array(b0)))), w), np.array(a0)) < 1e-6
    assert check_gradients(lambda t: weighted_sum(arelu(Tensor(x), AReLUParams(Tensor(np.array(a0)), t)), w), np.array(b0)) < 1e-6


# conv2d ----------------------------------------------------------------------


def test_conv_ones_kernel():
    out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1))).data[0]
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])
    np.testing.assert_array_equal(out, brute_conv(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), [0.0])[0])


def test_conv_matches_brute_force(rng):
    x = rng.standard_normal((3, 5, 6))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(w), Tensor(b)).data, brute_conv(x, w, b), atol=1e-12)


def test_conv_dirac_identity(rng):
    x = rng.standard_normal((2, 5, 5))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_preserves_spatial_dims():
    spec = ConvSpec(4, 7)
    out = conv2d(Tensor(np.ones((4, 6, 9))), Tensor(np.zeros(spec.weight_shape)), Tensor(np.zeros(spec.bias_shape)))
    assert out.shape == (7, 6, 9)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_conv_even_kernel_rejected():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


def test_conv_gradients(rng):
    x = rng.standard_normal((1, 4, 4))
    w = rng.standard_normal((2, 1, 3, 3))
    b = rng.standard_normal(2)
    g = rng.standard_normal((2, 4, 4))
    assert check_gradients(lambda t: weighted_sum(conv2d(Tensor(x), t, Tensor(b)), g), w) < 1e-4
    assert check_gradients(lambda t: weighted_sum(conv2d(t, Tensor(w), Tensor(b)), g), x) < 1e-4
    assert check_gradients(lambda t: weighted_sum(conv2d(Tensor(x), Tensor(w), t), g), b) < 1e-4


def test_conv_1x1_gradients(rng):
    x, w, b = rng.standard_normal((3, 4, 4)), rng.standard_normal((2, 3, 1, 1)), rng.standard_normal(2)
    g = rng.standard_normal((2, 4, 4))
    assert check_gradients(lambda t: weighted_sum(conv2d(t, Tensor(w), Tensor(b)), g), x) < 1e-4
    assert check_gradients(lambda t: weighted_sum(conv2d(Tensor(x), t, Tensor(b)), g), w) < 1e-4


# maxpool ---------------------------------------------------------------------


def test_maxpool_single_window():
    assert maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).item() == 4.0


def test_maxpool_constant_ties_to_first():
    x = Tensor(np.full((1, 4, 4), 2.0), requires_grad=True)
    out = maxpool2d(x)
    np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 2.0))
    backward(tsum(out))
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(x.grad[0], expected)


def test_maxpool_gradient_conservation(rng):
    x = Tensor(rng.standard_normal((1, 8, 8)), requires_grad=True)
    g = rng.standard_normal((1, 4, 4))
    backward(weighted_sum(maxpool2d(x), g))
    assert np.isclose(x.grad.sum(), g.sum())
    assert np.count_nonzero(x.grad) == 16
    # brute-force argmax oracle
    oracle = np.zeros((8, 8))
    for i in range(4):
        for j in range(4):
            win = x.data[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
            di, dj = np.unravel_index(np.argmax(win), (2, 2))
            oracle[2 * i + di, 2 * j + dj] = g[0, i, j]
    np.testing.assert_array_equal(x.grad[0], oracle)


def test_maxpool_inverts_nearest_upscale(rng):
    x = rng.standard_normal((3, 4, 5))
    up = x.repeat(2, axis=1).repeat(2, axis=2)
    np.testing.assert_array_equal(maxpool2d(Tensor(up)).data, x)


def test_maxpool_odd_dims():
    with pytest.raises(ShapeError):
        maxpool2d(Tensor(np.ones((1, 3, 4))))


def test_maxpool_gradient_check(rng):
    x = rng.permutation(64).reshape(1, 8, 8) / 10.0  # distinct values, gaps >> h
    g = rng.standard_normal((1, 4, 4))
    assert check_gradients(lambda t: weighted_sum(maxpool2d(t), g), x) < 1e-4


# transposed conv -------------------------------------------------------------


def test_conv_transpose_single_pixel():
    w = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = conv_transpose2d(Tensor([[[2.5]]]), Tensor(w))
    np.testing.assert_array_equal(out.data, 2.5 * w[0])


def test_conv_transpose_doubles_dims():
    assert conv_transpose2d(Tensor(np.ones((3, 4, 5))), Tensor(np.ones((3, 2, 2, 2)))).shape == (2, 8, 10)


def test_conv_transpose_is_adjoint_of_strided_conv(rng):
    c_in, c_out, h, w = 2, 3, 4, 4
    wt = rng.standard_normal((c_in, c_out, 2, 2))
    # explicit matrix of the stride-2 2x2 convolution [c_out,2h,2w] -> [c_in,h,w]
    n_small, n_big = c_in * h * w, c_out * 4 * h * w
    mat = np.zeros((n_small, n_big))
    for ci in range(c_in):
        for i in range(h):
            for j in range(w):
                row = (ci * h + i) * w + j
                for co in range(c_out):
                    for di in range(2):
                        for dj in range(2):
                            col = (co * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj
                            mat[row, col] = wt[ci, co, di, dj]
    x = rng.standard_normal((c_in, h, w))
    out = conv_transpose2d(Tensor(x), Tensor(wt)).data
    np.testing.assert_allclose(out.ravel(), mat.T @ x.ravel(), atol=1e-12)


def test_conv_transpose_gradients(rng):
    x, w = rng.standard_normal((2, 3, 3)), rng.standard_normal((2, 3, 2, 2))
    b = rng.standard_normal(3)
    g = rng.standard_normal((3, 6, 6))
    assert check_gradients(lambda t: weighted_sum(conv_transpose2d(t, Tensor(w)), g), x) < 1e-4
    assert check_gradients(lambda t: weighted_sum(conv_transpose2d(Tensor(x), t), g), w) < 1e-4
    assert check_gradients(lambda t: weighted_sum(conv_transpose2d(Tensor(x), Tensor(w), t), g), b) < 1e-4


def test_conv_transpose_shape_errors():
    with pytest.raises(ShapeError):
        conv_transpose2d(Tensor(np.ones((2, 3, 3))), Tensor(np.ones((3, 1, 2, 2))))
    with pytest.raises(ShapeError):
        conv_transpose2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))


# concat ----------------------------------------------------------------------


def test_concat_values_and_roundtrip(rng):
    out = concat_channels(Tensor(np.ones((1, 2, 2))), Tensor(np.zeros((1, 2, 2))))
    assert out.shape == (2, 2, 2)
    np.testing.assert_array_equal(out.data[0], np.ones((2, 2)))
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((4, 3, 3))
    cat = concat_channels(Tensor(a), Tensor(b))
    np.testing.assert_array_equal(slice_channels(cat, 0, 2).data, a)
    np.testing.assert_array_equal(slice_channels(cat, 2, 6).data, b)


def test_concat_gradient_mass(rng):
    a = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 3, 3)), requires_grad=True)
    g = rng.standard_normal((3, 3, 3))
    backward(weighted_sum(concat_channels(a, b), g))
    assert np.isclose(a.grad.sum() + b.grad.sum(), g.sum())
    np.testing.assert_array_equal(a.grad, g[:2])
    np.testing.assert_array_equal(b.grad, g[2:])
    assert check_gradients(lambda t: weighted_sum(concat_channels(t, b.detach()), g), a.data) < 1e-4


def test_concat_spatial_mismatch():
    with pytest.raises(ShapeError):
        concat_channels(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 3, 2))))


def test_kink_points_are_excluded():
    x = np.array([[[0.0, 1.0], [-1.0, 0.0]]])
    res = gradient_check_details(lambda t: tsum(arelu(t, params(0.5, 0.0))), x)
    assert sorted(res.kinks) == [(0, 0, 0), (0, 1, 1)]
    assert res.max_rel_error < 1e-8
