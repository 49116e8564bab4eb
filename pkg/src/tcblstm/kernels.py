"""Fused elementwise kernels for the LSTM cell, activations and softmax.

Every kernel has a numba loop version (``*_nb``) and a numpy version
(``*_np``). The module-level names without suffix are bound to whichever
backend :mod:`tcblstm._backend` selected, except ``sigmoid``, which is
always numpy (it is faster). Both versions are dtype-preserving
so the float64 gradient-check path runs through the same code.

Gate layout inside a fused pre-activation block ``z`` of shape
``(batch, 4 * cell)`` is ``[input, forget, candidate, output]``.
"""

import numpy as np

from ._backend import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def sigmoid_np(x):
    # branchless and overflow-free; exact 0/1 only where float rounding saturates
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def softmax_rows_np(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def lstm_cell_forward_np(z, c_prev, cell_clip):
    """Returns ``(gates, c, h, tanh_c, pass_mask)``; ``gates`` holds activated values."""
    n = c_prev.shape[1]
    gates = np.tanh(z * z.dtype.type(0.5))
    gates[:, 2 * n : 3 * n] = np.tanh(z[:, 2 * n : 3 * n])
    for sl in (gates[:, : 2 * n], gates[:, 3 * n :]):
        sl *= 0.5
        sl += 0.5
    i = gates[:, :n]
    f = gates[:, n : 2 * n]
    g = gates[:, 2 * n : 3 * n]
    o = gates[:, 3 * n :]
    c_raw = f * c_prev + i * g
    pass_mask = np.abs(c_raw) <= cell_clip
    c = np.clip(c_raw, -cell_clip, cell_clip).astype(c_prev.dtype, copy=False)
    tanh_c = np.tanh(c)
    return gates, c, o * tanh_c, tanh_c, pass_mask


def lstm_cell_backward_np(dh, dc_next, gates, c_prev, tanh_c, pass_mask):
    """Returns ``(dz, dc_prev)`` for one step."""
    n = c_prev.shape[1]
    i = gates[:, :n]
    f = gates[:, n : 2 * n]
    g = gates[:, 2 * n : 3 * n]
    o = gates[:, 3 * n :]
    dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
    dc = np.where(pass_mask, dc, 0.0).astype(dh.dtype, copy=False)
    dz = np.empty_like(gates)
    dz[:, :n] = dc * g * i * (1.0 - i)
    dz[:, n : 2 * n] = dc * c_prev * f * (1.0 - f)
    dz[:, 2 * n : 3 * n] = dc * i * (1.0 - g * g)
    dz[:, 3 * n :] = dh * tanh_c * o * (1.0 - o)
    return dz, dc * f


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


# libm tanh is several times slower than exp under numba, and numpy's SIMD
# tanh beats both on whole blocks; scalar activations here use one exp of a
# non-positive argument.


@njit
def _sigmoid_scalar(v):
    if v >= 0:
        return 1.0 / (1.0 + np.exp(-v))
    e = np.exp(v)
    return e / (1.0 + e)


@njit
def _tanh_scalar(v):
    e = np.exp(-2.0 * abs(v))
    t = (1.0 - e) / (1.0 + e)
    return t if v >= 0 else -t


@njit
def sigmoid_nb(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for k in range(flat_in.size):
        flat_out[k] = _sigmoid_scalar(flat_in[k])
    return out


@njit
def softmax_rows_nb(logits):
    rows, cols = logits.shape
    out = np.empty_like(logits)
    for r in range(rows):
        m = logits[r, 0]
        for j in range(1, cols):
            if logits[r, j] > m:
                m = logits[r, j]
        total = 0.0
        for j in range(cols):
            e = np.exp(logits[r, j] - m)
            out[r, j] = e
            total += e
        for j in range(cols):
            out[r, j] = out[r, j] / total
    return out


@njit
def _cell_from_tanh(t, c_prev, cell_clip):
    # t holds tanh(z/2) for the sigmoid gates and tanh(z) for the candidate
    batch, n = c_prev.shape
    gates = np.empty_like(t)
    c = np.empty_like(c_prev)
    h = np.empty_like(c_prev)
    tanh_c = np.empty_like(c_prev)
    pass_mask = np.empty((batch, n), dtype=np.bool_)
    for b in range(batch):
        for k in range(n):
            i = 0.5 + 0.5 * t[b, k]
            f = 0.5 + 0.5 * t[b, n + k]
            g = t[b, 2 * n + k]
            o = 0.5 + 0.5 * t[b, 3 * n + k]
            gates[b, k] = i
            gates[b, n + k] = f
            gates[b, 2 * n + k] = g
            gates[b, 3 * n + k] = o
            raw = f * c_prev[b, k] + i * g
            if raw > cell_clip:
                cv = cell_clip
                pass_mask[b, k] = False
            elif raw < -cell_clip:
                cv = -cell_clip
                pass_mask[b, k] = False
            else:
                cv = raw
                pass_mask[b, k] = True
            c[b, k] = cv
            tc = _tanh_scalar(c[b, k])
            tanh_c[b, k] = tc
            h[b, k] = o * tc
    return gates, c, h, tanh_c, pass_mask


def lstm_cell_forward_nb(z, c_prev, cell_clip):
    """Vectorised tanh over all gate pre-activations, the rest fused in one loop."""
    n = c_prev.shape[1]
    scale = np.full(4 * n, 0.5, dtype=z.dtype)
    scale[2 * n : 3 * n] = 1.0
    return _cell_from_tanh(np.tanh(z * scale), c_prev, cell_clip)


@njit
def lstm_cell_backward_nb(dh, dc_next, gates, c_prev, tanh_c, pass_mask):
    batch, n = c_prev.shape
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(batch):
        for k in range(n):
            i = gates[b, k]
            f = gates[b, n + k]
            g = gates[b, 2 * n + k]
            o = gates[b, 3 * n + k]
            t = tanh_c[b, k]
            dc = dc_next[b, k] + dh[b, k] * o * (1.0 - t * t)
            if not pass_mask[b, k]:
                dc = 0.0
            dz[b, k] = dc * g * i * (1.0 - i)
            dz[b, n + k] = dc * c_prev[b, k] * f * (1.0 - f)
            dz[b, 2 * n + k] = dc * i * (1.0 - g * g)
            dz[b, 3 * n + k] = dh[b, k] * t * o * (1.0 - o)
            dc_prev[b, k] = dc * f
    return dz, dc_prev


# The numba sigmoid loses ~10x to numpy's SIMD tanh on whole blocks (see
# benchmarks/bench_kernels.py), so numpy keeps it under both backends; the
# _nb version stays tested for agreement.
sigmoid = sigmoid_np
if USE_NUMBA:
    softmax_rows = softmax_rows_nb
    lstm_cell_forward = lstm_cell_forward_nb
    lstm_cell_backward = lstm_cell_backward_nb
else:
    softmax_rows = softmax_rows_np
    lstm_cell_forward = lstm_cell_forward_np
    lstm_cell_backward = lstm_cell_backward_np
