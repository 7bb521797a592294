import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import f64
from skyseg import tensor as T
from skyseg.gradcheck import gradcheck, projection


def test_create_fills():
    assert T.create([2, 2], "f32", 0.0).data.tolist() == [[0, 0], [0, 0]]
    t = T.create([3], "f64", 1.0)
    assert t.data.tolist() == [1, 1, 1] and t.dtype == np.float64


@pytest.mark.parametrize("fill", ["uniform", "normal"])
def test_seeded_create_is_bit_identical(fill):
    a = T.create([4], "f32", fill, seed=7)
    b = T.create([4], "f32", fill, seed=7)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.tobytes() != T.create([4], "f32", fill, seed=8).data.tobytes()


def test_random_fill_requires_seed():
    with pytest.raises(ValueError):
        T.create([3], "f32", "uniform")


def test_create_overflow_and_negative_dims():
    with pytest.raises(OverflowError):
        T.create([2 ** 40, 2 ** 40], "f32")
    with pytest.raises(ValueError):
        T.create([-1, 2], "f32")


def test_rank0_has_one_element():
    t = T.create([], "f64", 3.0)
    assert t.size == 1 and t.item() == 3.0


@pytest.mark.parametrize("op,a,b,want", [
    ("add", [1, 2], [3, 4], [4, 6]),
    ("sub", [1, 2], [3, 5], [-2, -3]),
    ("mul", [1, 2], [3, 4], [3, 8]),
    ("relu", [-1, 0, 2], None, [0, 0, 2]),
    ("negate", [1, -2], None, [-1, 2]),
    ("exp", [0.0], None, [1.0]),
])
def test_elementwise_values(op, a, b, want):
    out = T.elementwise(op, f64(a, False), None if b is None else f64(b, False))
    assert np.allclose(out.data, want)


def test_log_of_one_and_e():
    assert np.allclose(T.log(f64([1.0, math.e], False)).data, [0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("bad", [[0.0, 1.0], [-1.0, 2.0]])
def test_log_of_non_positive_raises(bad):
    with pytest.raises(T.DomainError):
        T.log(f64(bad, False))


def test_scalar_broadcast_only():
    a = f64([1.0, 2.0], False)
    assert np.allclose(T.add(a, f64(3.0, False)).data, [4, 5])
    with pytest.raises(T.ShapeError):
        T.add(a, f64([1.0, 2.0, 3.0], False))
    with pytest.raises(T.ShapeError):
        T.mul(f64(np.ones((2, 1)), False), f64(np.ones((1, 2)), False))


def test_scalar_mul():
    assert np.allclose(T.elementwise("scalar-mul", f64([1.0, -2.0], False), 3.0).data, [3, -6])


def test_reductions():
    assert T.reduce("sum", f64([1, 2, 3], False)).item() == 6
    assert T.reduce("mean", f64([[1, 3], [5, 7]], False), 1).data.tolist() == [2, 6]
    assert T.reduce("max", f64([2, -1, 2], False)).item() == 2


def test_max_gradient_goes_to_first_maximum():
    x = f64([2.0, -1.0, 2.0])
    g = T.backward(T.max_(x), wrt=[x])[x]
    assert g.tolist() == [1.0, 0.0, 0.0]


def test_invalid_axis():
    with pytest.raises(T.ShapeError):
        T.sum_(f64([1, 2], False), 3)


def test_concat_and_slice():
    a = f64(np.arange(32).reshape(1, 2, 4, 4), False)
    b = f64(np.arange(48).reshape(1, 3, 4, 4) + 100, False)
    c = T.concat([a, b], axis=1)
    assert c.dims == (1, 5, 4, 4)
    assert c[:, :2].data.tobytes() == a.data.tobytes()
    assert c[:, 2:].data.tobytes() == b.data.tobytes()
    with pytest.raises(T.ShapeError):
        T.concat([a, f64(np.zeros((1, 1, 3, 4)), False)], axis=1)


def test_reshape_round_trip():
    x = f64(np.arange(6.0), False)
    y = T.reshape(T.reshape(x, (2, 3)), (6,))
    assert y.data.tolist() == x.data.tolist()
    with pytest.raises(T.ShapeError):
        T.reshape(x, (4,))


def test_pad_zero():
    out = T.pad_zero(f64([[1.0]], False), [(0, 1), (1, 0)])
    assert out.data.tolist() == [[0, 1], [0, 0]]


def test_softmax_examples():
    assert np.allclose(T.softmax(f64([0.0, 0.0], False), 0).data, [0.5, 0.5])
    assert np.allclose(T.softmax(f64([0.0, math.log(3)], False), 0).data, [0.25, 0.75], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(x, k):
    p = T.softmax(f64(x, False), 1).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(T.softmax(f64(x + k, False), 1).data, p, atol=1e-6)


def test_softmax_large_logits_stay_finite():
    p = T.softmax(f64([1000.0, 0.0], False), 0).data
    assert np.isfinite(p).all() and p[0] == 1.0


def test_grad_of_sum_of_squares():
    x = f64([1.0, -2.0, 3.0])
    g = T.backward(T.sum_(T.mul(x, x)), wrt=[x])[x]
    assert g.tolist() == [2.0, -4.0, 6.0]


def test_grad_of_relu_sum():
    x = f64([-1.0, 2.0])
    assert T.backward(T.sum_(T.relu(x)), wrt=[x])[x].tolist() == [0.0, 1.0]


def test_backward_needs_scalar_root():
    x = f64([1.0, 2.0])
    with pytest.raises(T.ShapeError):
        T.backward(T.mul(x, x))


def test_unused_input_gets_zero_gradient():
    x, y = f64([1.0, 2.0]), f64([3.0, 4.0])
    grads = T.backward(T.sum_(y), wrt=[x, y])
    assert grads[x].tolist() == [0.0, 0.0]
    assert grads[y].tolist() == [1.0, 1.0]


def test_grad_accumulates_across_calls_but_result_is_per_call():
    x = f64([1.0, 2.0])
    g1 = T.backward(T.sum_(x), wrt=[x])[x]
    g2 = T.backward(T.sum_(T.scalar_mul(x, 3.0)), wrt=[x])[x]
    assert g1.tolist() == [1, 1] and g2.tolist() == [3, 3]
    assert x.grad.tolist() == [4, 4]


def test_shared_subexpression_gradient():
    x = f64([2.0])
    y = T.mul(x, x)
    z = T.add(y, y)
    assert T.backward(T.sum_(z), wrt=[x])[x].tolist() == [8.0]


def test_no_grad_records_nothing():
    x = f64([1.0])
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_grad_dtype_matches_data():
    x = T.Tensor(np.ones(3, np.float32), requires_grad=True)
    T.backward(T.sum_(T.mul(x, x)), wrt=[x])
    assert x.grad.dtype == np.float32


UNARY_CHAINS = [
    lambda a: T.exp(T.scalar_mul(T.relu(a), 0.5)),
    lambda a: T.log(T.add(T.mul(a, a), f64(1.0, False))),
    lambda a: T.softmax(T.mul(a, a), 1),
    lambda a: T.max_(T.reshape(a, (4, 3)), 1),
    lambda a: T.mean(T.concat([a, T.negate(a)], 0), 0),
    lambda a: T.pad_zero(T.div(a, T.add(T.square(a), f64(2.0, False))), [(1, 0), (0, 2)]),
    lambda a: T.sub(a[:, 3:], T.exp(a[:, :3])),
]


@pytest.mark.parametrize("chain", range(len(UNARY_CHAINS)))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_chain_gradcheck(chain, seed):
    x = f64(np.random.default_rng(seed).normal(size=(2, 6)) + 0.01)
    res = gradcheck(projection(UNARY_CHAINS[chain], seed), [x])
    assert res.passed(1e-6), res


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_gradcheck(op):
    rng = np.random.default_rng(5)
    a = f64(rng.normal(size=(3, 4)))
    b = f64(rng.uniform(0.5, 2.0, size=(3, 4)))
    res = gradcheck(projection(lambda u, v: T.elementwise(op, u, v)), [a, b])
    assert res.passed(1e-6), res
