"""Affine/ReLU layers, the bias-free LSTM, the bidirectional context and
time-convolution windowing, each with an exact backward pass.

Sequences are Python lists of ``(batch, dim)`` arrays, one per timestep.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InputError, ShapeError
from .tensor import relu

GATES = ("i", "f", "c", "o")
LSTM_WEIGHT_NAMES = ("W_xi", "W_hi", "W_xf", "W_hf", "W_xc", "W_hc", "W_xo", "W_ho")
DEFAULT_CELL_CLIP = 3.0


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------


@dataclass
class AffineLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (1, out_dim)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (1, self.weight.shape[1]):
            raise ShapeError(
                f"bias {self.bias.shape} inconsistent with weight {self.weight.shape}"
            )

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


def affine_forward(layer, x):
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"input {x.shape} does not match weight {layer.weight.shape}")
    pre = x @ layer.weight + layer.bias
    y = relu(pre) if layer.activation == "relu" else pre
    return y, (layer, x, pre)


def affine_backward(cache, grad_y):
    layer, x, pre = cache
    if grad_y.shape != pre.shape:
        raise ShapeError(f"gradient {grad_y.shape} does not match output {pre.shape}")
    if layer.activation == "relu":
        grad_y = np.where(pre > 0, grad_y, 0).astype(grad_y.dtype, copy=False)
    grad_x = grad_y @ layer.weight.T
    grad_w = x.T @ grad_y
    grad_b = grad_y.sum(axis=0, keepdims=True)
    return grad_x, grad_w, grad_b


def affine_stack_forward(layers, x):
    caches = []
    for layer in layers:
        x, cache = affine_forward(layer, x)
        caches.append(cache)
    return x, caches


def affine_stack_backward(caches, grad_y):
    """Returns ``(grad_x, [(grad_w, grad_b), ...])`` in forward layer order."""
    grads = []
    for cache in reversed(caches):
        grad_y, gw, gb = affine_backward(cache, grad_y)
        grads.append((gw, gb))
    grads.reverse()
    return grad_y, grads


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    """The eight bias-free LSTM weight matrices.

    Input weights are ``(in_dim, cell_dim)``, recurrent weights
    ``(cell_dim, cell_dim)``; a row vector ``x`` multiplies as ``x @ W``.
    """

    W_xi: np.ndarray
    W_hi: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    cell_clip: float = DEFAULT_CELL_CLIP

    def __post_init__(self):
        in_dim, n = self.W_xi.shape
        for gate in GATES:
            wx = getattr(self, f"W_x{gate}")
            wh = getattr(self, f"W_h{gate}")
            if wx.shape != (in_dim, n) or wh.shape != (n, n):
                raise ShapeError(
                    f"gate {gate}: input weight {wx.shape} / recurrent weight "
                    f"{wh.shape}, expected {(in_dim, n)} / {(n, n)}"
                )
        if not self.cell_clip > 0:
            raise ConfigError(f"cell_clip must be positive, got {self.cell_clip}")

    @property
    def in_dim(self):
        return self.W_xi.shape[0]

    @property
    def cell_dim(self):
        return self.W_xi.shape[1]

    def weights(self):
        return {name: getattr(self, name) for name in LSTM_WEIGHT_NAMES}

    def input_weights(self):
        return np.concatenate([self.W_xi, self.W_xf, self.W_xc, self.W_xo], axis=1)

    def recurrent_weights(self):
        return np.concatenate([self.W_hi, self.W_hf, self.W_hc, self.W_ho], axis=1)

    @classmethod
    def from_fused(cls, wx, wh, cell_clip=DEFAULT_CELL_CLIP):
        n = wh.shape[0]
        parts = {}
        for k, gate in enumerate(GATES):
            parts[f"W_x{gate}"] = wx[:, k * n : (k + 1) * n]
            parts[f"W_h{gate}"] = wh[:, k * n : (k + 1) * n]
        return cls(**parts, cell_clip=cell_clip)


@dataclass
class LstmStepState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch, cell_dim, dtype=np.float32):
        return cls(np.zeros((batch, cell_dim), dtype), np.zeros((batch, cell_dim), dtype))


def _cell(zx, prev, wh, cell_clip):
    z = zx + prev.h @ wh
    gates, c, h, tanh_c, mask = kernels.lstm_cell_forward(
        np.ascontiguousarray(z), np.ascontiguousarray(prev.c), cell_clip
    )
    return LstmStepState(h, c), (gates, tanh_c, mask)


def lstm_step(params, x_t, prev):
    """One LSTM step; returns the new state and a cache for backward."""
    batch = x_t.shape[0]
    if x_t.ndim != 2 or x_t.shape[1] != params.in_dim:
        raise ShapeError(f"x_t {x_t.shape} does not match in_dim {params.in_dim}")
    if prev.h.shape != (batch, params.cell_dim) or prev.c.shape != prev.h.shape:
        raise ShapeError(
            f"previous state h {prev.h.shape} / c {prev.c.shape}, "
            f"expected {(batch, params.cell_dim)}"
        )
    zx = x_t @ params.input_weights()
    state, aux = _cell(zx, prev, params.recurrent_weights(), params.cell_clip)
    return state, (x_t, prev, aux)


@dataclass
class LstmCache:
    xs: np.ndarray  # (T, batch, in_dim)
    h_prev: np.ndarray  # (T, batch, cell): state entering each step
    c_prev: np.ndarray
    gates: list
    tanh_c: list
    masks: list


def lstm_forward(params, sequence):
    """Run the LSTM from a zero state; returns ``(hs, cache)`` with ``hs[t]`` per step."""
    if len(sequence) == 0:
        raise InputError("cannot run an LSTM over an empty sequence")
    xs = np.stack(sequence)
    T, batch, in_dim = xs.shape
    if in_dim != params.in_dim:
        raise ShapeError(f"frames have dim {in_dim}, LSTM expects {params.in_dim}")
    n = params.cell_dim
    wh = params.recurrent_weights()
    zx_all = (xs.reshape(T * batch, in_dim) @ params.input_weights()).reshape(T, batch, 4 * n)
    state = LstmStepState.zeros(batch, n, xs.dtype)
    h_prev = np.empty((T, batch, n), xs.dtype)
    c_prev = np.empty((T, batch, n), xs.dtype)
    hs, gates, tanh_c, masks = [], [], [], []
    for t in range(T):
        h_prev[t] = state.h
        c_prev[t] = state.c
        state, (g, tc, m) = _cell(zx_all[t], state, wh, params.cell_clip)
        hs.append(state.h)
        gates.append(g)
        tanh_c.append(tc)
        masks.append(m)
    return hs, LstmCache(xs, h_prev, c_prev, gates, tanh_c, masks)


def lstm_backward(params, cache, grad_h):
    """Backpropagation through time.

    ``grad_h[t]`` is the loss gradient w.r.t. ``hs[t]``; ``None`` entries mean
    zero. Returns ``(grad_params, grad_xs)`` where ``grad_params`` is an
    :class:`LstmParams` holding gradients.
    """
    T, batch, in_dim = cache.xs.shape
    if len(grad_h) != T:
        raise ShapeError(f"got {len(grad_h)} hidden gradients for a length-{T} sequence")
    n = params.cell_dim
    dtype = cache.xs.dtype
    wh_t = params.recurrent_weights().T
    dz_all = np.empty((T, batch, 4 * n), dtype)
    dh_next = np.zeros((batch, n), dtype)
    dc_next = np.zeros((batch, n), dtype)
    for t in range(T - 1, -1, -1):
        dh = dh_next if grad_h[t] is None else dh_next + grad_h[t]
        dz, dc_next = kernels.lstm_cell_backward(
            np.ascontiguousarray(dh, dtype=dtype),
            dc_next,
            cache.gates[t],
            cache.c_prev[t],
            cache.tanh_c[t],
            cache.masks[t],
        )
        dz_all[t] = dz
        dh_next = dz @ wh_t
    dz_flat = dz_all.reshape(T * batch, 4 * n)
    dwx = cache.xs.reshape(T * batch, in_dim).T @ dz_flat
    dwh = cache.h_prev.reshape(T * batch, n).T @ dz_flat
    dxs = (dz_flat @ params.input_weights().T).reshape(T, batch, in_dim)
    grads = LstmParams.from_fused(dwx, dwh, params.cell_clip)
    return grads, list(dxs)


# ---------------------------------------------------------------------------
# bidirectional
# ---------------------------------------------------------------------------


def _check_pair(fwd, bwd):
    if fwd.cell_dim != bwd.cell_dim or fwd.in_dim != bwd.in_dim:
        raise ConfigError(
            f"direction mismatch: forward ({fwd.in_dim}->{fwd.cell_dim}) vs "
            f"backward ({bwd.in_dim}->{bwd.cell_dim})"
        )


def blstm_forward(fwd, bwd, sequence):
    """Both directions over ``sequence``.

    Returns ``(hs_f, hs_b, cache)``; ``hs_b`` is re-aligned to original time
    order, so ``hs_b[0]`` is the backward LSTM's final state.
    """
    _check_pair(fwd, bwd)
    hs_f, cache_f = lstm_forward(fwd, sequence)
    hs_b_rev, cache_b = lstm_forward(bwd, sequence[::-1])
    return hs_f, hs_b_rev[::-1], (cache_f, cache_b)


def blstm_backward(fwd, bwd, cache, grad_f, grad_b):
    """``grad_f``/``grad_b`` are per-timestep gradient lists in original order."""
    cache_f, cache_b = cache
    gf, dxs_f = lstm_backward(fwd, cache_f, grad_f)
    gb, dxs_b_rev = lstm_backward(bwd, cache_b, grad_b[::-1])
    dxs = [a + b for a, b in zip(dxs_f, dxs_b_rev[::-1])]
    return gf, gb, dxs


def blstm_sequence(fwd, bwd, sequence):
    """Per-timestep ``[h_t^f ; h_t^b]`` outputs, used below a stacked BLSTM layer."""
    hs_f, hs_b, cache = blstm_forward(fwd, bwd, sequence)
    out = [np.concatenate([a, b], axis=1) for a, b in zip(hs_f, hs_b)]
    return out, cache


def blstm_sequence_backward(fwd, bwd, cache, grad_out):
    n = fwd.cell_dim
    grad_f = [g[:, :n] for g in grad_out]
    grad_b = [g[:, n:] for g in grad_out]
    return blstm_backward(fwd, bwd, cache, grad_f, grad_b)


def blstm_context(fwd, bwd, sequence):
    """Context vector: last forward state then final backward state, ``(batch, 2n)``."""
    hs_f, hs_b, cache = blstm_forward(fwd, bwd, sequence)
    context = np.concatenate([hs_f[-1], hs_b[0]], axis=1)
    return context, cache


def blstm_context_backward(fwd, bwd, cache, grad_context):
    n = fwd.cell_dim
    T = len(cache[0].gates)
    grad_f = [None] * T
    grad_b = [None] * T
    grad_f[-1] = grad_context[:, :n]
    grad_b[0] = grad_context[:, n:]
    return blstm_backward(fwd, bwd, cache, grad_f, grad_b)


# ---------------------------------------------------------------------------
# time convolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeConvSpec:
    context_frames: int = 21
    tc_width: int = 5
    tied_columns: bool = True

    def __post_init__(self):
        if self.context_frames < 1 or self.context_frames % 2 == 0:
            raise ConfigError(f"context_frames must be odd and positive, got {self.context_frames}")
        if not 1 <= self.tc_width <= self.context_frames:
            raise ConfigError(
                f"tc_width {self.tc_width} must lie in [1, context_frames={self.context_frames}]"
            )

    @property
    def num_steps(self):
        return self.context_frames - self.tc_width + 1


def tc_window_batch(windows, context_frames, tc_width):
    """Slice flat windows ``(batch, context_frames*feat)`` into stride-1 columns.

    Returns ``num_steps`` arrays of shape ``(batch, tc_width*feat)``.
    """
    batch, width = windows.shape
    if width % context_frames:
        raise ShapeError(f"window width {width} is not a multiple of {context_frames} frames")
    if tc_width > context_frames:
        raise ConfigError(f"tc_width {tc_width} exceeds context_frames {context_frames}")
    feat = width // context_frames
    cols = tc_width * feat
    return [
        np.ascontiguousarray(windows[:, t * feat : t * feat + cols])
        for t in range(context_frames - tc_width + 1)
    ]


def tc_window(spec, frames):
    """Stride-1 overlapping windows over one context block of frames."""
    if frames.ndim != 2 or frames.shape[0] != spec.context_frames:
        raise ShapeError(f"expected {spec.context_frames} frames, got array {frames.shape}")
    flat = frames.reshape(1, -1)
    return tc_window_batch(flat, spec.context_frames, spec.tc_width)
