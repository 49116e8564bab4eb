import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcblstm import layers
from tcblstm.errors import ConfigError, InputError, ShapeError
from tcblstm.layers import AffineLayer, LstmParams, LstmStepState, TimeConvSpec
from tcblstm.verify import scalar_lstm_oracle


def random_lstm(rng, in_dim, n, scale=0.5, dtype=np.float64):
    shapes = [(in_dim, n), (n, n)] * 4
    return LstmParams(*(rng.normal(0, scale, s).astype(dtype) for s in shapes))


def test_affine_forward_relu_and_none(rng):
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=(1, 2))
    x = rng.normal(size=(4, 3))
    y, _ = layers.affine_forward(AffineLayer(w, b, "none"), x)
    np.testing.assert_allclose(y, x @ w + b)
    y, _ = layers.affine_forward(AffineLayer(w, b, "relu"), x)
    np.testing.assert_allclose(y, np.maximum(x @ w + b, 0))


def test_affine_shape_errors(rng):
    layer = AffineLayer(np.zeros((3, 2)), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        layers.affine_forward(layer, np.zeros((4, 5)))


def test_lstm_params_fused_roundtrip(rng):
    p = random_lstm(rng, 3, 4)
    q = LstmParams.from_fused(p.input_weights(), p.recurrent_weights())
    for a, b in zip(p.weights(), q.weights()):
        np.testing.assert_array_equal(a, b)
    assert p.in_dim == 3 and p.cell_dim == 4


def test_lstm_step_all_ones_golden():
    # i = f = o = sigmoid(1), c = sigmoid(1) * tanh(1), h = o * tanh(c)
    p = LstmParams(*(np.ones((1, 1)) for _ in range(8)))
    state, _ = layers.lstm_step(p, np.ones((1, 1)), LstmStepState.zeros(1, 1, np.float64))
    assert state.h[0, 0] == pytest.approx(0.3696, abs=1e-4)
    assert state.h[0, 0] == pytest.approx(scalar_lstm_oracle([1.0] * 8, [1.0])[0][4], abs=1e-15)


def test_lstm_zero_weights_give_zero_output(rng):
    p = LstmParams(*(np.zeros(s) for s in [(2, 3), (3, 3)] * 4))
    hs, _ = layers.lstm_forward(p, list(rng.normal(size=(5, 4, 2))))
    for h in hs:
        np.testing.assert_array_equal(h, 0.0)


def test_lstm_clip_records_exactly_three():
    p = LstmParams(*(np.full((1, 1), 10.0) for _ in range(8)))
    state = LstmStepState.zeros(1, 1, np.float64)
    for _ in range(4):
        state, _ = layers.lstm_step(p, np.ones((1, 1)), state)
    assert state.c[0, 0] == 3.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), steps=st.integers(1, 6))
def test_lstm_step_matches_scalar_oracle(seed, steps):
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 2.0, 8)
    xs = rng.normal(0, 2.0, steps)
    expected = scalar_lstm_oracle(w, xs)
    p = LstmParams(*(np.array([[v]]) for v in w))
    state = LstmStepState.zeros(1, 1, np.float64)
    for x, (_, _, c, _, h) in zip(xs, expected):
        state, _ = layers.lstm_step(p, np.array([[x]]), state)
        assert state.h[0, 0] == pytest.approx(h, abs=1e-6)
        assert state.c[0, 0] == pytest.approx(c, abs=1e-6)


def test_lstm_forward_equals_repeated_step(rng):
    p = random_lstm(rng, 3, 4)
    seq = list(rng.normal(size=(6, 2, 3)))
    hs, _ = layers.lstm_forward(p, seq)
    state = LstmStepState.zeros(2, 4, np.float64)
    for x, h in zip(seq, hs):
        state, _ = layers.lstm_step(p, x, state)
        np.testing.assert_allclose(h, state.h, rtol=1e-12)


def test_lstm_rejects_empty_and_mismatched(rng):
    p = random_lstm(rng, 3, 4)
    with pytest.raises(InputError):
        layers.lstm_forward(p, [])
    with pytest.raises(ShapeError):
        layers.lstm_forward(p, [np.zeros((2, 5))])
    with pytest.raises(ShapeError):
        layers.lstm_step(p, np.zeros((2, 3)), LstmStepState.zeros(2, 5))


def test_blstm_context_layout(rng):
    f, b = random_lstm(rng, 3, 4), random_lstm(rng, 3, 4)
    seq = list(rng.normal(size=(5, 2, 3)))
    ctx, _ = layers.blstm_context(f, b, seq)
    hs_f, _ = layers.lstm_forward(f, seq)
    hs_b, _ = layers.lstm_forward(b, seq[::-1])
    np.testing.assert_array_equal(ctx[:, :4], hs_f[-1])
    np.testing.assert_array_equal(ctx[:, 4:], hs_b[-1])


def test_blstm_reversal_symmetry_with_tied_directions(rng):
    p = random_lstm(rng, 3, 4)
    seq = list(rng.normal(size=(6, 2, 3)))
    ctx, _ = layers.blstm_context(p, p, seq)
    rev, _ = layers.blstm_context(p, p, seq[::-1])
    np.testing.assert_array_equal(ctx[:, :4], rev[:, 4:])
    np.testing.assert_array_equal(ctx[:, 4:], rev[:, :4])


def test_blstm_direction_mismatch_is_config_error(rng):
    with pytest.raises(ConfigError):
        layers.blstm_context(random_lstm(rng, 3, 4), random_lstm(rng, 3, 5), [np.zeros((1, 3))])


def test_time_conv_spec_validation():
    assert TimeConvSpec(21, 5).num_steps == 17
    with pytest.raises(ConfigError):
        TimeConvSpec(20, 5)
    with pytest.raises(ConfigError):
        TimeConvSpec(7, 9)
    with pytest.raises(ConfigError):
        TimeConvSpec(7, 0)


def test_tc_window_columns_overlap_by_stride_one():
    frames = np.arange(7 * 2, dtype=float).reshape(7, 2)
    cols = layers.tc_window_batch(frames.reshape(1, -1), 7, 3)
    assert len(cols) == 5
    for t, col in enumerate(cols):
        np.testing.assert_array_equal(col[0], frames[t : t + 3].ravel())


def test_tc_window_width_one_is_per_frame():
    frames = np.arange(5 * 3, dtype=float).reshape(5, 3)
    cols = layers.tc_window(TimeConvSpec(5, 1), frames)
    assert len(cols) == 5
    np.testing.assert_array_equal(np.concatenate(cols), frames)


def test_tc_window_rejects_bad_width():
    with pytest.raises(ShapeError):
        layers.tc_window_batch(np.zeros((2, 10)), 7, 3)
