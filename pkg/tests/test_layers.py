import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import f64
from oracles import conv_loop, maxpool_loop
from skyseg import tensor as T
from skyseg import layers as L
from skyseg.gradcheck import gradcheck, projection


def test_conv_ones_kernel_center_and_corner():
    out = L.conv2d(f64(np.ones((1, 1, 3, 3)), False), f64(np.ones((1, 1, 3, 3)), False))
    assert out.data[0, 0, 1, 1] == 9 and out.data[0, 0, 0, 0] == 4


def test_conv_delta_kernel_is_identity(rng):
    x = f64(rng.normal(size=(2, 3, 5, 6)), False)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1
    out = L.conv2d(x, f64(w, False), f64(np.zeros(3), False))
    assert np.array_equal(out.data, x.data)


@pytest.mark.parametrize("k,stride,dilation,size", [
    (3, 1, 1, (7, 7)), (3, 1, 2, (7, 7)), (3, 2, 1, (7, 6)), (2, 1, 1, (5, 5)),
    (4, 1, 1, (6, 5)), (3, 2, 3, (9, 8)), (1, 1, 1, (4, 4)), (5, 1, 1, (3, 3)),
])
def test_conv_matches_loop_oracle(rng, k, stride, dilation, size):
    x = rng.normal(size=(2, 3) + size)
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out = L.conv2d(f64(x, False), f64(w, False), f64(b, False), stride, dilation)
    assert out.dims[2:] == (math.ceil(size[0] / stride), math.ceil(size[1] / stride))
    assert np.allclose(out.data, conv_loop(x, w, b, stride, dilation), atol=1e-10)


def test_conv_asymmetric_kernel(rng):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 1, 5))
    assert np.allclose(L.conv2d(f64(x, False), f64(w, False)).data, conv_loop(x, w), atol=1e-10)


def test_even_kernel_pads_bottom_right():
    # a 2x2 ones kernel at the last row/col only sees one real row/col
    x = np.ones((1, 1, 3, 3))
    out = L.conv2d(f64(x, False), f64(np.ones((1, 1, 2, 2)), False)).data[0, 0]
    assert out[0, 0] == 4 and out[2, 2] == 1 and out[2, 0] == 2


def test_conv_channel_mismatch():
    with pytest.raises(T.ShapeError):
        L.conv2d(f64(np.zeros((1, 2, 4, 4)), False), f64(np.zeros((1, 3, 3, 3)), False))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 2, 3, 5, 7]), st.integers(1, 4))
def test_stride_one_preserves_dims(h, w, k, dilation):
    x = f64(np.zeros((1, 1, h, w)), False)
    assert L.conv2d(x, f64(np.zeros((2, 1, k, k)), False), dilation=dilation).dims == (1, 2, h, w)


def test_separable_double_identity(rng):
    x = f64(rng.normal(size=(1, 3, 4, 4)), False)
    dw = np.zeros((3, 1, 3, 3))
    dw[:, 0, 1, 1] = 1
    pw = np.eye(3).reshape(3, 3, 1, 1)
    assert np.array_equal(L.separable_conv2d(x, f64(dw, False), f64(pw, False)).data, x.data)


def test_separable_equals_two_convs(rng):
    x = rng.normal(size=(2, 4, 6, 5))
    dw, pw, b = rng.normal(size=(4, 1, 3, 3)), rng.normal(size=(5, 4, 1, 1)), rng.normal(size=5)
    got = L.separable_conv2d(f64(x, False), f64(dw, False), f64(pw, False), f64(b, False)).data
    # depthwise as a dense conv with a block-diagonal kernel
    dense = np.zeros((4, 4, 3, 3))
    for c in range(4):
        dense[c, c] = dw[c, 0]
    want = L.conv2d(L.conv2d(f64(x, False), f64(dense, False)), f64(pw, False), f64(b, False)).data
    assert np.allclose(got, want, atol=1e-6)
    assert np.allclose(got, conv_loop(conv_loop(x, dense), pw, b), atol=1e-6)


def test_separable_shape():
    x = f64(np.zeros((1, 2, 4, 4)), False)
    out = L.separable_conv2d(x, f64(np.zeros((2, 1, 3, 3)), False), f64(np.zeros((3, 2, 1, 1)), False))
    assert out.dims == (1, 3, 4, 4)


@pytest.mark.parametrize("cin,cout", [(1, 2), (3, 3), (16, 48), (48, 16), (256, 512)])
def test_separable_has_fewer_parameters(cin, cout):
    sep = L.separable_param_count(cin, cout, 3)
    assert sep == cin * 9 + cin * cout + cout
    assert sep < L.conv_param_count(cin, cout, 3) == cout * cin * 9 + cout


def test_maxpool_examples():
    assert L.maxpool2(f64([[[[1.0, 2.0], [3.0, 4.0]]]], False)).data.tolist() == [[[[4.0]]]]


def test_maxpool_tie_routes_to_first_element():
    x = f64(np.full((1, 1, 4, 4), 3.0))
    out = L.maxpool2(x)
    assert np.all(out.data == 3.0)
    g = T.backward(T.sum_(out), wrt=[x])[x][0, 0]
    want = np.zeros((4, 4))
    want[::2, ::2] = 1
    assert np.array_equal(g, want)


def test_maxpool_matches_oracle(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    assert np.array_equal(L.maxpool2(f64(x, False)).data, maxpool_loop(x))


def test_maxpool_rejects_odd_dims():
    with pytest.raises(T.ShapeError):
        L.maxpool2(f64(np.zeros((1, 1, 3, 4)), False))


def test_upsample_examples(rng):
    assert L.upsample_nn2(f64([[[[5.0]]]], False)).data.tolist() == [[[[5, 5], [5, 5]]]]
    x = f64(rng.normal(size=(1, 2, 3, 4)))
    assert np.array_equal(L.maxpool2(L.upsample_nn2(x)).data, x.data)
    g = T.backward(T.sum_(L.upsample_nn2(x)), wrt=[x])[x]
    assert np.all(g == 4)


def test_batchnorm_closed_form():
    x = f64(np.array([1.0, 3.0]).reshape(1, 1, 1, 2), False)
    out = L.batchnorm(x, f64([1.0], False), f64([0.0], False)).data.ravel()
    assert np.allclose(out, [-1 / math.sqrt(1 + 1e-5), 1 / math.sqrt(1 + 1e-5)])


def test_batchnorm_zero_gamma_gives_beta(rng):
    x = f64(rng.normal(size=(2, 3, 4, 4)), False)
    out = L.batchnorm(x, f64(np.zeros(3), False), f64([1.0, -2.0, 0.5], False)).data
    assert np.allclose(out, np.array([1.0, -2.0, 0.5])[None, :, None, None] * np.ones_like(out))


@pytest.mark.parametrize("seed", range(5))
def test_batchnorm_statistics(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(3.0, 5.0, size=(3, 4, 6, 6))
    out = L.batchnorm(f64(x, False), f64(np.ones(4), False), f64(np.zeros(4), False), eps=0.0).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4


def test_batchnorm_degenerate_channel():
    x = f64(np.ones((1, 2, 1, 1)), False)
    with pytest.raises(L.DegenerateBatchError):
        L.batchnorm(x, f64(np.ones(2), False), f64(np.zeros(2), False))
    relaxed = L.batchnorm(x, f64(np.ones(2), False), f64([0.5, -1.0], False), strict=False)
    assert np.allclose(relaxed.data.ravel(), [0.5, -1.0])


def test_he_uniform_bounds_and_determinism():
    a = L.he_uniform((1000,), fan_in=6, seed=3)
    assert np.all(np.abs(a.data) <= 1.0)
    assert a.data.tobytes() == L.he_uniform((1000,), fan_in=6, seed=3).data.tobytes()
    big = L.he_uniform((100_000,), fan_in=6, seed=4, dtype="f64")
    assert abs(big.data.mean()) < 0.02
    with pytest.raises(ValueError):
        L.he_uniform((2,), fan_in=0, seed=0)


def _params(rng, *shapes):
    return [f64(rng.normal(size=s)) for s in shapes]


LAYER_CASES = {
    "conv3x3": ((2, 3, 5, 5), lambda x, w, b: L.conv2d(x, w, b), [(4, 3, 3, 3), (4,)]),
    "conv_dilated": ((1, 2, 7, 7), lambda x, w, b: L.conv2d(x, w, b, dilation=2), [(3, 2, 3, 3), (3,)]),
    "conv_stride2": ((1, 2, 7, 6), lambda x, w, b: L.conv2d(x, w, b, stride=2), [(3, 2, 3, 3), (3,)]),
    "depthwise": ((1, 3, 5, 5), lambda x, w: L.depthwise_conv2d(x, w), [(3, 1, 3, 3)]),
    "separable": ((2, 3, 4, 4), lambda x, d, p, b: L.separable_conv2d(x, d, p, b), [(3, 1, 3, 3), (2, 3, 1, 1), (2,)]),
    "maxpool": ((1, 2, 4, 6), L.maxpool2, []),
    "upsample": ((1, 2, 3, 3), L.upsample_nn2, []),
    "batchnorm": ((2, 3, 3, 3), lambda x, g, b: L.batchnorm(x, g, b), [(3,), (3,)]),
}


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradcheck(name):
    rng = np.random.default_rng(11)
    shape, fn, pshapes = LAYER_CASES[name]
    inputs = [f64(rng.normal(size=shape))] + _params(rng, *pshapes)
    res = gradcheck(projection(fn, 3), inputs)
    assert res.passed(1e-6), (name, res)
    assert res.max_abs_grad > 0
