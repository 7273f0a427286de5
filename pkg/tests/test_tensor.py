import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smamba import gradsuite
from smamba import tensor as T
from smamba.errors import NumericError, ShapeError
from smamba.tensor import Tensor


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    assert Tensor(np.zeros(3, dtype=np.float64), dtype=np.float64).dtype == np.float64


@pytest.mark.parametrize("sa,sb,out", [((3, 4), (4,), (3, 4)), ((2, 1, 4), (3, 1), (2, 3, 4)), ((), (2,), (2,))])
def test_broadcast_shapes(sa, sb, out):
    assert T.add(Tensor(np.ones(sa)), Tensor(np.ones(sb))).shape == out


def test_broadcast_mismatch_raises():
    with pytest.raises(ShapeError):
        T.mul(Tensor(np.ones((3, 4))), Tensor(np.ones((3,))))


def test_matmul_and_linear_shape_errors():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        T.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 5, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    y = T.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64)).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 3))
    for i in range(5):
        for j in range(6):
            ref[0, i, j] = np.einsum("abc,abcd->d", xp[0, i:i + 3, j:j + 3], w)
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_stride_output_size():
    y = T.conv2d(Tensor(np.ones((1, 8, 8, 1))), Tensor(np.ones((2, 2, 1, 4))), stride=2, padding=0)
    assert y.shape == (1, 4, 4, 4)
    np.testing.assert_array_equal(y.data, 4.0)


def test_layer_norm_normalizes_last_axis(rng):
    y = T.layer_norm(Tensor(rng.normal(3.0, 2.0, size=(4, 16)), dtype=np.float64)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-4)


def test_softmax_rows_sum_to_one(rng):
    y = T.softmax(Tensor(rng.normal(size=(3, 5)) * 50), axis=-1).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-6)


def test_softplus_is_stable_for_large_inputs():
    y = T.softplus(Tensor(np.array([-200.0, 0.0, 200.0]), dtype=np.float64)).data
    np.testing.assert_allclose(y, [np.exp(-200.0), np.log(2.0), 200.0], rtol=1e-12)


def test_dropout_contract(rng):
    x = Tensor(np.ones((100, 100)), dtype=np.float32)
    assert T.dropout(x, 0.3, training=False) is x
    y = T.dropout(x, 0.3, training=True, rng=rng).data
    assert set(np.unique(y)).issubset({0.0, np.float32(1 / 0.7)})
    assert abs((y == 0).mean() - 0.3) < 0.02
    with pytest.raises(ValueError):
        T.dropout(x, 1.0, training=True, rng=rng)


def test_non_finite_values_raise():
    with pytest.raises(NumericError):
        T.exp(Tensor(np.array([1000.0]), dtype=np.float64))


def test_backward_accumulates_and_zero_fills_unused():
    a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    unused = Tensor(np.ones(4), requires_grad=True)
    loss = T.sum(T.mul(a, a))
    T.backward(loss, [a, unused])
    np.testing.assert_array_equal(a.grad, [4.0, 6.0])
    np.testing.assert_array_equal(unused.grad, np.zeros(4))
    T.backward(T.sum(a), [a])
    np.testing.assert_array_equal(a.grad, [5.0, 7.0])


def test_graph_cannot_be_replayed():
    a = Tensor(np.ones(2), requires_grad=True)
    loss = T.sum(T.mul(a, 2.0))
    T.backward(loss)
    with pytest.raises(RuntimeError):
        T.backward(loss)


def test_backward_requires_scalar():
    a = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ShapeError):
        T.backward(T.mul(a, 2.0))


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    T.reset_tape()
    with T.no_grad():
        y = T.mul(a, 3.0)
    assert y._node is None and len(T.current_tape()) == 0


def test_shared_subexpression_gradient():
    a = Tensor(np.array([1.5]), requires_grad=True, dtype=np.float64)
    b = T.exp(a)
    T.backward(T.sum(T.mul(b, b)))
    np.testing.assert_allclose(a.grad, [2 * np.exp(3.0)], rtol=1e-12)


def test_grad_check_rejects_float32():
    with pytest.raises(TypeError):
        T.grad_check(lambda x: T.sum(x), Tensor(np.ones(2), dtype=np.float32))


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_take_gradient_counts_repeats(indices):
    x = Tensor(np.zeros(6), requires_grad=True, dtype=np.float64)
    T.backward(T.sum(T.take(x, np.array(indices), axis=0)))
    np.testing.assert_array_equal(x.grad, np.bincount(indices, minlength=6))


@pytest.mark.parametrize("result", list(gradsuite.run_suite("ops")), ids=lambda r: r.name)
def test_op_gradients(result):
    assert result.error <= gradsuite.OP_TOL, f"{result.name}: {result.error:.3e}"
