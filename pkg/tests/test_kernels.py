"""The numba and numpy backends must agree on every kernel."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcblstm import kernels
from tcblstm._backend import HAVE_NUMBA, backend_name

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def _cell_inputs(seed, batch, n, scale, dtype):
    rng = np.random.default_rng(seed)
    z = (rng.normal(0, scale, (batch, 4 * n))).astype(dtype)
    c_prev = rng.normal(0, 2.0, (batch, n)).astype(dtype)
    return z, c_prev


def test_backend_name_is_known():
    assert backend_name() in ("numba", "numpy")


@needs_numba
@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    batch=st.integers(1, 5),
    n=st.integers(1, 6),
    scale=st.sampled_from([0.1, 1.0, 5.0]),
)
def test_cell_forward_backends_agree(seed, batch, n, scale):
    z, c_prev = _cell_inputs(seed, batch, n, scale, np.float64)
    ref = kernels.lstm_cell_forward_np(z, c_prev, 3.0)
    got = kernels.lstm_cell_forward_nb(z, c_prev, 3.0)
    for a, b in zip(ref[:4], got[:4]):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(ref[4], got[4])


@needs_numba
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), batch=st.integers(1, 5), n=st.integers(1, 6))
def test_cell_backward_backends_agree(seed, batch, n):
    z, c_prev = _cell_inputs(seed, batch, n, 2.0, np.float64)
    gates, _, _, tanh_c, mask = kernels.lstm_cell_forward_np(z, c_prev, 3.0)
    rng = np.random.default_rng(seed + 1)
    dh, dc = rng.normal(size=(2, batch, n))
    ref = kernels.lstm_cell_backward_np(dh, dc, gates, c_prev, tanh_c, mask)
    got = kernels.lstm_cell_backward_nb(dh, dc, gates, c_prev, tanh_c, mask)
    for a, b in zip(ref, got):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-14)


@needs_numba
def test_activation_backends_agree(rng):
    x = rng.normal(0, 10, (7, 9))
    np.testing.assert_allclose(kernels.sigmoid_nb(x), kernels.sigmoid_np(x), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(kernels.softmax_rows_nb(x), kernels.softmax_rows_np(x), rtol=1e-12)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_kernels_preserve_dtype(dtype):
    z, c_prev = _cell_inputs(0, 3, 4, 1.0, dtype)
    gates, c, h, tanh_c, mask = kernels.lstm_cell_forward(z, c_prev, 3.0)
    assert gates.dtype == c.dtype == h.dtype == dtype
    assert mask.dtype == np.bool_
    assert kernels.softmax_rows(z).dtype == dtype


def test_clip_mask_marks_saturated_cells():
    n = 2
    z = np.zeros((1, 4 * n))
    z[0, : 2 * n] = 50.0  # input and forget gates fully open
    z[0, 2 * n : 3 * n] = 50.0  # candidate ~ +1
    c_prev = np.array([[2.5, -3.5]])
    _, c, _, _, mask = kernels.lstm_cell_forward(z, c_prev, 3.0)
    np.testing.assert_array_equal(c, [[3.0, -2.5]])
    np.testing.assert_array_equal(mask, [[False, True]])
