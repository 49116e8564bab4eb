"""Variant assembly: DNN baseline through TC-DNN-BLSTM-DNN.

Parameters live in a flat, ordered ``name -> 2-D array`` mapping
(:class:`ModelParams`). Layer objects from :mod:`tcblstm.layers` are views
over those arrays built on demand, so gradients come back under the same
names and the optimizer, checkpoint and wire code only ever see named blocks.
"""

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .layers import (
    LSTM_WEIGHT_NAMES,
    AffineLayer,
    LstmParams,
    TimeConvSpec,
    affine_stack_backward,
    affine_stack_forward,
    blstm_context,
    blstm_context_backward,
    blstm_sequence,
    blstm_sequence_backward,
    tc_window_batch,
)
from .tensor import DTYPE, cross_entropy, softmax_rows

VARIANTS = ("dnn", "blstm", "dnn_blstm", "blstm_dnn", "dnn_blstm_dnn", "tc_dnn_blstm_dnn")

# (needs input DNN, needs output DNN) for each variant
_STAGES = {
    "dnn": (True, False),
    "blstm": (False, False),
    "dnn_blstm": (True, False),
    "blstm_dnn": (False, True),
    "dnn_blstm_dnn": (True, True),
    "tc_dnn_blstm_dnn": (True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "tc_dnn_blstm_dnn"
    feat_dim: int = 16
    num_classes: int = 4
    input_dnn_layers: tuple = (64, 64)
    cell_dim: int = 32
    blstm_layers: int = 1
    output_dnn_layers: tuple = (64, 64)
    tc: TimeConvSpec = field(default_factory=TimeConvSpec)
    seed: int = 0
    lstm_init_range: float = 0.01
    dnn_init_std: float = 0.001
    cell_clip: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "input_dnn_layers", tuple(int(w) for w in self.input_dnn_layers))
        object.__setattr__(self, "output_dnn_layers", tuple(int(w) for w in self.output_dnn_layers))

    def validate(self):
        problems = []
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        need_in, need_out = _STAGES[self.variant]
        if need_in and not self.input_dnn_layers:
            problems.append(f"variant {self.variant} requires nonempty input_dnn_layers")
        if not need_in and self.input_dnn_layers:
            problems.append(f"variant {self.variant} requires empty input_dnn_layers")
        if need_out and not self.output_dnn_layers:
            problems.append(f"variant {self.variant} requires nonempty output_dnn_layers")
        if not need_out and self.output_dnn_layers:
            problems.append(f"variant {self.variant} requires empty output_dnn_layers")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feat_dim < 1:
            problems.append(f"feat_dim must be >= 1, got {self.feat_dim}")
        if any(w < 1 for w in self.input_dnn_layers + self.output_dnn_layers):
            problems.append("DNN layer widths must be >= 1")
        if self.has_blstm:
            if self.blstm_layers not in (1, 2):
                problems.append(f"blstm_layers must be 1 or 2, got {self.blstm_layers}")
            if self.cell_dim < 1:
                problems.append(f"cell_dim must be >= 1, got {self.cell_dim}")
        if not self.lstm_init_range > 0 or not self.dnn_init_std > 0:
            problems.append("initialisation scales must be positive")
        if not self.cell_clip > 0:
            problems.append(f"cell_clip must be positive, got {self.cell_clip}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @property
    def has_blstm(self):
        return self.variant != "dnn"

    @property
    def tc_width(self):
        """Effective column width; only the TC variant convolves."""
        return self.tc.tc_width if self.variant == "tc_dnn_blstm_dnn" else 1

    @property
    def num_steps(self):
        return self.tc.context_frames - self.tc_width + 1

    @property
    def window_width(self):
        return self.tc.context_frames * self.feat_dim

    def with_(self, **changes):
        return replace(self, **changes)


class ModelParams:
    """Ordered mapping of unique block names to 2-D arrays."""

    def __init__(self, blocks):
        self.blocks = OrderedDict(blocks)

    def __getitem__(self, name):
        return self.blocks[name]

    def __setitem__(self, name, value):
        self.blocks[name] = value

    def __contains__(self, name):
        return name in self.blocks

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def names(self):
        return list(self.blocks)

    def items(self):
        return self.blocks.items()

    @property
    def dtype(self):
        return next(iter(self.blocks.values())).dtype

    @property
    def total_parameter_count(self):
        return sum(a.shape[0] * a.shape[1] for a in self.blocks.values())

    def copy(self):
        return ModelParams((k, v.copy()) for k, v in self.blocks.items())

    def astype(self, dtype):
        return ModelParams((k, v.astype(dtype)) for k, v in self.blocks.items())

    def zeros_like(self):
        return ModelParams((k, np.zeros_like(v)) for k, v in self.blocks.items())

    def flatten(self):
        return np.concatenate([v.ravel() for v in self.blocks.values()])

    def unflatten(self, vector):
        """A new collection shaped like ``self`` filled from ``vector``."""
        vector = np.asarray(vector)
        if vector.size != self.total_parameter_count:
            raise ShapeError(
                f"vector has {vector.size} entries, parameters need {self.total_parameter_count}"
            )
        out, pos = OrderedDict(), 0
        for k, v in self.blocks.items():
            out[k] = vector[pos : pos + v.size].reshape(v.shape).astype(v.dtype)
            pos += v.size
        return ModelParams(out)

    def shapes(self):
        return OrderedDict((k, v.shape) for k, v in self.blocks.items())

    def bitwise_equal(self, other):
        if self.names() != other.names():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.blocks.values(), other.blocks.values())
        )

    def __repr__(self):
        return f"ModelParams({len(self)} blocks, {self.total_parameter_count} values)"


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def _affine_names(prefix, k):
    return f"{prefix}.{k}.weight", f"{prefix}.{k}.bias"


def param_layout(config):
    """Ordered ``(name, shape, kind)`` triples; kind is ``dnn``, ``bias`` or ``lstm``."""
    config.validate()
    layout = []

    def affine(prefix, dims):
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            w, bias = _affine_names(prefix, k)
            layout.append((w, (a, b), "dnn"))
            layout.append((bias, (1, b), "bias"))

    if config.variant == "dnn":
        dims = (config.window_width,) + config.input_dnn_layers
        affine("dnn", dims)
        top = dims[-1]
    else:
        col = config.tc_width * config.feat_dim
        if config.input_dnn_layers:
            dims = (col,) + config.input_dnn_layers
            if config.tc.tied_columns:
                affine("in_dnn", dims)
            else:
                for t in range(config.num_steps):
                    affine(f"in_dnn.t{t}", dims)
            col = dims[-1]
        n = config.cell_dim
        for layer in range(config.blstm_layers):
            in_dim = col if layer == 0 else 2 * n
            for direction in ("fwd", "bwd"):
                for name in LSTM_WEIGHT_NAMES:
                    shape = (in_dim, n) if name[2] == "x" else (n, n)
                    layout.append((f"blstm.{layer}.{direction}.{name}", shape, "lstm"))
        dims = (2 * n,) + config.output_dnn_layers
        affine("out_dnn", dims)
        top = dims[-1]
    layout.append(("softmax.weight", (top, config.num_classes), "dnn"))
    layout.append(("softmax.bias", (1, config.num_classes), "bias"))
    return layout


def init_params(config):
    """Uniform(-r, r) LSTM weights, N(0, std) DNN weights, zero DNN biases."""
    rng = np.random.default_rng(config.seed)
    blocks = OrderedDict()
    for name, shape, kind in param_layout(config):
        if kind == "lstm":
            arr = rng.uniform(-config.lstm_init_range, config.lstm_init_range, size=shape)
        elif kind == "dnn":
            arr = rng.normal(0.0, config.dnn_init_std, size=shape)
        else:
            arr = np.zeros(shape)
        blocks[name] = arr.astype(DTYPE)
    return ModelParams(blocks)


def _affines(params, prefix, count):
    return [AffineLayer(*(params[n] for n in _affine_names(prefix, k))) for k in range(count)]


def _lstm(params, config, layer, direction):
    prefix = f"blstm.{layer}.{direction}."
    return LstmParams(**{n: params[prefix + n] for n in LSTM_WEIGHT_NAMES}, cell_clip=config.cell_clip)


def _put_affine_grads(grads, prefix, pairs):
    for k, (gw, gb) in enumerate(pairs):
        w, b = _affine_names(prefix, k)
        grads[w] = grads[w] + gw if w in grads else gw
        grads[b] = grads[b] + gb if b in grads else gb


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def forward(params, config, batch, train_mode=True):
    """Posteriors ``(batch, num_classes)`` and, in train mode, a backward cache."""
    if batch.ndim != 2 or batch.shape[1] != config.window_width:
        raise ShapeError(
            f"batch width {batch.shape[-1]} does not match context_frames*feat_dim = "
            f"{config.window_width}"
        )
    x = np.ascontiguousarray(batch, dtype=params.dtype)
    cache = {"train_mode": bool(train_mode), "rows": x.shape[0], "params": params}
    softmax_layer = [AffineLayer(params["softmax.weight"], params["softmax.bias"], "none")]

    if config.variant == "dnn":
        hidden = _affines(params, "dnn", len(config.input_dnn_layers))
        top, cache["dnn"] = affine_stack_forward(hidden, x)
    else:
        seq = tc_window_batch(x, config.tc.context_frames, config.tc_width)
        if config.input_dnn_layers:
            depth = len(config.input_dnn_layers)
            if config.tc.tied_columns:
                T, rows = len(seq), x.shape[0]
                stacked, cache["in_dnn"] = affine_stack_forward(
                    _affines(params, "in_dnn", depth), np.concatenate(seq, axis=0)
                )
                seq = [stacked[t * rows : (t + 1) * rows] for t in range(T)]
            else:
                caches, out = [], []
                for t, col in enumerate(seq):
                    y, c = affine_stack_forward(_affines(params, f"in_dnn.t{t}", depth), col)
                    out.append(y)
                    caches.append(c)
                seq, cache["in_dnn"] = out, caches
        blstm_caches = []
        for layer in range(config.blstm_layers - 1):
            seq, c = blstm_sequence(
                _lstm(params, config, layer, "fwd"), _lstm(params, config, layer, "bwd"), seq
            )
            blstm_caches.append(c)
        last = config.blstm_layers - 1
        context, c = blstm_context(
            _lstm(params, config, last, "fwd"), _lstm(params, config, last, "bwd"), seq
        )
        blstm_caches.append(c)
        cache["blstm"] = blstm_caches
        top, cache["out_dnn"] = affine_stack_forward(
            _affines(params, "out_dnn", len(config.output_dnn_layers)), context
        )
    logits, cache["softmax"] = affine_stack_forward(softmax_layer, top)
    probs = softmax_rows(logits)
    cache["probs"] = probs
    return probs, (cache if train_mode else None)


def backward(params, config, cache, targets):
    """Mean cross-entropy and gradients named like ``params``."""
    if cache is None or not cache.get("train_mode"):
        raise UsageError("backward needs the cache of a forward call made with train_mode=True")
    if cache["params"] is not params:
        raise UsageError("stale cache: it was built by forward with a different parameter set")
    loss, grad = cross_entropy(cache["probs"], targets)
    grads = OrderedDict()
    grad, [(grads["softmax.weight"], grads["softmax.bias"])] = affine_stack_backward(
        cache["softmax"], grad
    )

    if config.variant == "dnn":
        _, pairs = affine_stack_backward(cache["dnn"], grad)
        _put_affine_grads(grads, "dnn", pairs)
    else:
        grad, pairs = affine_stack_backward(cache["out_dnn"], grad)
        _put_affine_grads(grads, "out_dnn", pairs)
        last = config.blstm_layers - 1
        fwd, bwd = _lstm(params, config, last, "fwd"), _lstm(params, config, last, "bwd")
        gf, gb, grad_seq = blstm_context_backward(fwd, bwd, cache["blstm"][last], grad)
        _put_lstm_grads(grads, last, gf, gb)
        for layer in range(last - 1, -1, -1):
            fwd, bwd = _lstm(params, config, layer, "fwd"), _lstm(params, config, layer, "bwd")
            gf, gb, grad_seq = blstm_sequence_backward(fwd, bwd, cache["blstm"][layer], grad_seq)
            _put_lstm_grads(grads, layer, gf, gb)
        if config.input_dnn_layers:
            if config.tc.tied_columns:
                _, pairs = affine_stack_backward(cache["in_dnn"], np.concatenate(grad_seq, axis=0))
                _put_affine_grads(grads, "in_dnn", pairs)
            else:
                for t, (c, g) in enumerate(zip(cache["in_dnn"], grad_seq)):
                    _, pairs = affine_stack_backward(c, g)
                    _put_affine_grads(grads, f"in_dnn.t{t}", pairs)

    ordered = OrderedDict((name, np.ascontiguousarray(grads[name])) for name in params.names())
    return loss, ModelParams(ordered)


def _put_lstm_grads(grads, layer, gf, gb):
    for direction, g in (("fwd", gf), ("bwd", gb)):
        for name, arr in g.weights().items():
            grads[f"blstm.{layer}.{direction}.{name}"] = arr


def predict(params, config, batch):
    probs, _ = forward(params, config, batch, train_mode=False)
    return np.argmax(probs, axis=1)


def evaluate(params, config, windows, targets, batch_size=1024):
    """Mean cross-entropy and frame accuracy over a whole split."""
    targets = np.asarray(targets)
    n = windows.shape[0]
    loss_sum, correct = 0.0, 0
    for start in range(0, n, batch_size):
        probs, _ = forward(params, config, windows[start : start + batch_size], train_mode=False)
        tgt = targets[start : start + batch_size]
        loss, _ = cross_entropy(probs, tgt)
        loss_sum += loss * len(tgt)
        correct += int((np.argmax(probs, axis=1) == tgt).sum())
    return loss_sum / n, correct / n
