import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tcblstm import tensor
from tcblstm.errors import LabelError, ParameterError, ShapeError

finite = st.floats(-50, 50, allow_nan=False, width=32)


def test_as_tensor_promotes_to_2d():
    assert tensor.as_tensor([1, 2, 3]).shape == (1, 3)
    assert tensor.as_tensor(5.0).shape == (1, 1)
    assert tensor.as_tensor(np.zeros((2, 3))).dtype == np.float32
    with pytest.raises(ShapeError):
        tensor.as_tensor(np.zeros((2, 2, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        tensor.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_matches_numpy(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_array_equal(tensor.matmul(a, b), a @ b)


@settings(deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_sigmoid_in_unit_interval_and_symmetric(x):
    s = tensor.sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + tensor.sigmoid(-x), 1.0, atol=1e-12)


def test_sigmoid_extremes_do_not_overflow():
    with np.errstate(all="raise"):
        s = tensor.sigmoid(np.array([[-1e4, 0.0, 1e4]]))
    np.testing.assert_array_equal(s, [[0.0, 0.5, 1.0]])


def test_relu_and_tanh():
    x = np.array([[-2.0, 0.0, 3.0]])
    np.testing.assert_array_equal(tensor.relu(x), [[0, 0, 3]])
    np.testing.assert_allclose(tensor.tanh_op(x), np.tanh(x))


def test_clip_bounds_and_rejects_nonpositive_limit():
    x = np.array([[-5.0, -3.0, 0.5, 3.0, 7.0]])
    np.testing.assert_array_equal(tensor.clip(x, 3.0), [[-3, -3, 0.5, 3, 3]])
    with pytest.raises(ParameterError):
        tensor.clip(x, 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-300, 300, allow_nan=False)))
def test_softmax_rows_are_distributions(logits):
    p = tensor.softmax_rows(logits)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)


def test_softmax_is_shift_invariant(rng):
    x = rng.normal(size=(3, 5))
    np.testing.assert_allclose(tensor.softmax_rows(x), tensor.softmax_rows(x + 100.0), rtol=1e-12)


def test_cross_entropy_uniform_is_log_k():
    probs = np.full((4, 5), 0.2)
    loss, grad = tensor.cross_entropy(probs, np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(np.log(5))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_cross_entropy_perfect_prediction_is_zero():
    probs = np.eye(3)
    loss, grad = tensor.cross_entropy(probs, np.arange(3))
    assert loss == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_cross_entropy_bad_label_names_row():
    with pytest.raises(LabelError, match="row 1"):
        tensor.cross_entropy(np.full((2, 3), 1 / 3), np.array([0, 3]))
    with pytest.raises(ShapeError):
        tensor.cross_entropy(np.full((2, 3), 1 / 3), np.array([0]))
