import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from atlas_avs import tensor as T
from atlas_avs.gradcheck import check_gradients
from atlas_avs.tensor import ContractError, DimensionError, Tensor, no_grad

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_matmul_identity_and_hand_case():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ m).data, [[1, 2], [3, 4]])
    np.testing.assert_array_equal((Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data, [[11]])


def test_matmul_gradient(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    for r in check_gradients(lambda: (a @ b).sum() * 1.0 + ((a @ b) * (a @ b)).sum(), [("a", a), ("b", b)], tol=1e-6):
        assert r.passed, r


def test_matmul_shape_error():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_elementwise_values():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    np.testing.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])
    np.testing.assert_allclose(T.gelu(Tensor([0.0, 1.0])).data, [0.0, 0.8413447460685429], rtol=1e-12)
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0, 2])


def test_sigmoid_extreme_inputs_are_finite():
    out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_gelu_gradient_at_point():
    x = leaf([0.7])
    (r,) = check_gradients(lambda: T.gelu(x).sum(), [("x", x)], tol=1e-6)
    assert r.passed


@pytest.mark.parametrize("op", [T.sigmoid, T.relu, T.gelu, T.exp, T.square, T.softplus, T.neg])
def test_unary_gradients(op, rng):
    x = leaf(rng.normal(size=(3, 4)) + 0.05)  # keep relu away from its kink
    w = rng.normal(size=(3, 4))
    (r,) = check_gradients(lambda: (op(x) * w).sum(), [("x", x)], tol=1e-6)
    assert r.passed, r


def test_softmax_cases():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_array_equal(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    assert abs(T.softmax(Tensor([1.0, 2.0, 3.0])).data.sum() - 1.0) <= 1e-12


def test_layer_norm_cases():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_allclose(T.layer_norm(Tensor([1.0, 3.0]), one, zero, eps=0.0).data, [-1, 1])
    const = T.layer_norm(Tensor(np.full((2, 3), 4.0)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(const.data, 0.0)


def test_layer_norm_gradient(rng):
    x, g, b = leaf(rng.normal(size=(4, 5))), leaf(rng.normal(size=5)), leaf(rng.normal(size=5))
    w = rng.normal(size=(4, 5))
    for r in check_gradients(lambda: (T.layer_norm(x, g, b) * w).sum(), [("x", x), ("g", g), ("b", b)], tol=1e-5):
        assert r.passed, r


def test_reductions():
    assert Tensor([2.0, 4.0]).mean().item() == 3.0
    x = leaf([1.0, 5.0, 5.0])
    x.max().backward()
    np.testing.assert_array_equal(x.grad, [0, 1, 0])
    y = leaf(np.ones((2, 3)))
    y.sum().backward()
    np.testing.assert_array_equal(y.grad, np.ones((2, 3)))


def test_backward_examples():
    x = leaf([1.0, 2.0])
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_gradients_accumulate_across_backward_calls():
    x = leaf([1.0, 2.0])
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [2, 2])


def test_shared_subexpression_counted_once_per_use():
    x = leaf([3.0])
    y = x * 2.0
    (y + y * y).sum().backward()  # d/dx (2x + 4x^2) = 2 + 8x
    np.testing.assert_allclose(x.grad, [26.0])


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad
    with pytest.raises(ContractError):
        y.sum().backward()


def test_broadcast_rules():
    a = Tensor(np.ones((2, 3, 4)))
    assert (a + Tensor(np.ones(4))).shape == (2, 3, 4)
    assert (a + Tensor(np.ones((3, 4)))).shape == (2, 3, 4)
    assert (a * Tensor(np.ones((2, 1, 4)))).shape == (2, 3, 4)
    with pytest.raises(DimensionError):
        a + Tensor(np.ones(3))


def test_broadcast_gradient_reduces_to_operand_shape(rng):
    a = leaf(rng.normal(size=(2, 3, 4)))
    v = leaf(rng.normal(size=(2, 1, 4)))
    p = leaf(rng.normal(size=(3, 4)))
    w = rng.normal(size=(2, 3, 4))
    for r in check_gradients(lambda: ((a * v + p) * w).sum(), [("a", a), ("v", v), ("p", p)], tol=1e-6):
        assert r.passed, r


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite))
def test_softmax_rows_normalized(x):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert (s >= 0).all()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite))
def test_log_softmax_matches_log_of_softmax(x):
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite))
def test_binary_op_gradients(a, b):
    x, y = leaf(a), leaf(b + 4.0)  # divisor kept away from 0
    for r in check_gradients(lambda: (x * y + x / y - y).sum(), [("x", x), ("y", y)], tol=1e-5):
        assert r.passed, r


def test_concat_stack_getitem_gradients(rng):
    a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 6))

    def fn():
        c = T.concat([a, b], axis=1)
        s = T.stack([a, b], axis=0)
        return (c * w).sum() + (s[1] * s[0]).sum() + (a[:, 1:] * 2.0).sum()

    for r in check_gradients(fn, [("a", a), ("b", b)], tol=1e-6):
        assert r.passed, r


def test_tape_is_topological():
    x = leaf([1.0])
    y = x * 2.0
    z = y + x
    tape = T.build_tape(z)
    assert tape.index(x) < tape.index(y) < tape.index(z)
