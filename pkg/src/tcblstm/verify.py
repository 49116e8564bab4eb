"""Independent oracles: central finite differences and a scalar LSTM.

None of the oracles here share code with the analytic backward passes they
check. Everything runs in float64.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import layers, model
from .errors import OracleError, ShapeError
from .layers import LstmParams, LstmStepState, TimeConvSpec
from .model import ModelConfig, ModelParams
from .tensor import cross_entropy, sigmoid, softmax_rows

EPSILON = 1e-4
TOLERANCE = 1e-4


def finite_diff_grad(loss_fn, params, epsilon=EPSILON):
    """Central-difference gradient of ``loss_fn`` at ``params``.

    ``params`` may be an array, a float, a :class:`ModelParams` or a dict of
    arrays; the result has the same structure in float64. ``loss_fn`` receives
    a perturbed float64 copy in that structure.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if isinstance(params, (int, float)):
        g = finite_diff_grad(lambda a: loss_fn(float(a[0])), np.array([float(params)]), epsilon)
        return float(g[0])
    if isinstance(params, np.ndarray):
        flat = params.astype(np.float64).ravel()
        rebuild = lambda v: v.reshape(params.shape)  # noqa: E731
        structure = params.shape
    else:
        blocks = params.blocks if isinstance(params, ModelParams) else OrderedDict(params)
        names = list(blocks)
        shapes = [blocks[k].shape for k in names]
        flat = np.concatenate([np.asarray(blocks[k], np.float64).ravel() for k in names])
        structure = (names, shapes, isinstance(params, ModelParams))

        def rebuild(v):
            out, pos = OrderedDict(), 0
            for k, shape in zip(names, shapes):
                size = int(np.prod(shape))
                out[k] = v[pos : pos + size].reshape(shape)
                pos += size
            return ModelParams(out) if structure[2] else out

    grad = np.empty_like(flat)
    for j in range(flat.size):
        saved = flat[j]
        flat[j] = saved + epsilon
        up = float(loss_fn(rebuild(flat.copy())))
        flat[j] = saved - epsilon
        down = float(loss_fn(rebuild(flat.copy())))
        flat[j] = saved
        if not (math.isfinite(up) and math.isfinite(down)):
            raise OracleError(f"non-finite loss when perturbing coordinate {_coord_name(structure, j)}")
        grad[j] = (up - down) / (2 * epsilon)
    return rebuild(grad)


def _coord_name(structure, j):
    if not isinstance(structure, tuple) or not structure or not isinstance(structure[0], list):
        return str(tuple(int(i) for i in np.unravel_index(j, structure)))
    names, shapes, _ = structure
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape))
        if j < size:
            return f"{name}{np.unravel_index(j, shape)}"
        j -= size
    return str(j)


def relative_error(a, b):
    """``max |a-b| / max(|a|, |b|, 1e-8)`` over all coordinates."""
    if isinstance(a, (ModelParams, dict)):
        a_blocks = a.blocks if isinstance(a, ModelParams) else a
        b_blocks = b.blocks if isinstance(b, ModelParams) else b
        if list(a_blocks) != list(b_blocks):
            raise ShapeError("gradient collections have different block names")
        return max((relative_error(a_blocks[k], b_blocks[k]) for k in a_blocks), default=0.0)
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def blockwise_relative_error(a, b):
    return OrderedDict((k, relative_error(a[k], b[k])) for k in a)


def scalar_lstm_oracle(weights, inputs, cell_clip=3.0):
    """Straight-line scalar evaluation of the gated cell.

    ``weights`` are the eight scalars ``(w_xi, w_hi, w_xf, w_hf, w_xc, w_hc,
    w_xo, w_ho)``. Returns one ``(i, f, c, o, h)`` tuple per input.
    """
    w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho = (float(w) for w in weights)

    def logistic(v):
        return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))

    h, c = 0.0, 0.0
    steps = []
    for x in inputs:
        x = float(x)
        i = logistic(w_xi * x + w_hi * h)
        f = logistic(w_xf * x + w_hf * h)
        c = f * c + i * math.tanh(w_xc * x + w_hc * h)
        c = min(cell_clip, max(-cell_clip, c))
        o = logistic(w_xo * x + w_ho * h)
        h = o * math.tanh(c)
        steps.append((i, f, c, o, h))
    return steps


# ---------------------------------------------------------------------------
# check suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float
    worst_block: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        where = f" worst={self.worst_block}" if self.worst_block else ""
        return f"{status}\t{self.name}\tmax_rel_err={self.max_rel_error:.3e}{where}"


def _result(name, analytic, numeric, tol=TOLERANCE):
    errs = OrderedDict((k, relative_error(analytic[k], numeric[k])) for k in analytic)
    worst = max(errs, key=errs.get)
    return CheckResult(name, errs[worst] < tol, errs[worst], worst)


def _random_lstm(rng, in_dim, n, scale=0.5):
    return LstmParams(
        **{k: rng.normal(0, scale, (in_dim if k[2] == "x" else n, n)) for k in layers.LSTM_WEIGHT_NAMES}
    )


def check_activation(name, rng, rows=3, cols=4):
    fn = {
        "sigmoid": sigmoid,
        "tanh": np.tanh,
        "relu": lambda v: np.maximum(v, 0),
    }[name]
    x = rng.normal(0, 1.5, (rows, cols))
    proj = rng.normal(0, 1, (rows, cols))
    if name == "sigmoid":
        s = sigmoid(x)
        analytic = s * (1 - s) * proj
    elif name == "tanh":
        analytic = (1 - np.tanh(x) ** 2) * proj
    else:
        analytic = (x > 0) * proj
    numeric = finite_diff_grad(lambda v: float((fn(v) * proj).sum()), x)
    return _result(name, {"x": analytic}, {"x": numeric})


def check_softmax_cross_entropy(rng, rows=4, classes=5):
    logits = rng.normal(0, 2, (rows, classes))
    targets = rng.integers(0, classes, rows)
    _, analytic = cross_entropy(softmax_rows(logits), targets)
    numeric = finite_diff_grad(lambda z: cross_entropy(softmax_rows(z), targets)[0], logits)
    return _result("softmax_cross_entropy", {"logits": analytic}, {"logits": numeric})


def check_affine(rng, activation, in_dim=3, out_dim=4, rows=5):
    w = rng.normal(0, 0.7, (in_dim, out_dim))
    b = rng.normal(0, 0.5, (1, out_dim))
    x = rng.normal(0, 1, (rows, in_dim))
    proj = rng.normal(0, 1, (rows, out_dim))

    def loss(p):
        y, _ = layers.affine_forward(layers.AffineLayer(p["weight"], p["bias"], activation), p["x"])
        return float((y * proj).sum())

    start = {"x": x, "weight": w, "bias": b}
    _, cache = layers.affine_forward(layers.AffineLayer(w, b, activation), x)
    gx, gw, gb = layers.affine_backward(cache, proj)
    numeric = finite_diff_grad(loss, start)
    return _result(f"affine[{activation}]", {"x": gx, "weight": gw, "bias": gb}, numeric)


def _lstm_blocks(p, xs):
    blocks = OrderedDict(p.weights())
    for t, x in enumerate(xs):
        blocks[f"x{t}"] = x
    return blocks


def _split_lstm(blocks, T):
    p = LstmParams(**{k: blocks[k] for k in layers.LSTM_WEIGHT_NAMES})
    return p, [blocks[f"x{t}"] for t in range(T)]


def check_lstm(rng, T=5, in_dim=3, n=4, batch=2, scale=0.5, name=None, grad_hook=None):
    params = _random_lstm(rng, in_dim, n, scale)
    xs = [rng.normal(0, 1, (batch, in_dim)) for _ in range(T)]
    projs = [rng.normal(0, 1, (batch, n)) for _ in range(T)]

    def loss(blocks):
        p, seq = _split_lstm(blocks, T)
        hs, _ = layers.lstm_forward(p, seq)
        return float(sum((h * r).sum() for h, r in zip(hs, projs)))

    _, cache = layers.lstm_forward(params, xs)
    grads, gxs = layers.lstm_backward(params, cache, projs)
    analytic = _lstm_blocks(grads, gxs)
    if grad_hook is not None:
        grad_hook(analytic)
    numeric = finite_diff_grad(loss, _lstm_blocks(params, xs))
    return _result(name or f"lstm_forward[T={T}]", analytic, numeric)


def check_blstm_context(rng, T=4, in_dim=3, n=3, batch=2):
    fwd = _random_lstm(rng, in_dim, n)
    bwd = _random_lstm(rng, in_dim, n)
    xs = [rng.normal(0, 1, (batch, in_dim)) for _ in range(T)]
    proj = rng.normal(0, 1, (batch, 2 * n))

    def pack(f, b, seq):
        blocks = OrderedDict()
        for tag, p in (("fwd", f), ("bwd", b)):
            for k, v in p.weights().items():
                blocks[f"{tag}.{k}"] = v
        for t, x in enumerate(seq):
            blocks[f"x{t}"] = x
        return blocks

    def unpack(blocks):
        f = LstmParams(**{k: blocks[f"fwd.{k}"] for k in layers.LSTM_WEIGHT_NAMES})
        b = LstmParams(**{k: blocks[f"bwd.{k}"] for k in layers.LSTM_WEIGHT_NAMES})
        return f, b, [blocks[f"x{t}"] for t in range(T)]

    def loss(blocks):
        context, _ = layers.blstm_context(*unpack(blocks))
        return float((context * proj).sum())

    _, cache = layers.blstm_context(fwd, bwd, xs)
    gf, gb, gxs = layers.blstm_context_backward(fwd, bwd, cache, proj)
    analytic = pack(gf, gb, gxs)
    numeric = finite_diff_grad(loss, pack(fwd, bwd, xs))
    return _result("blstm_context", analytic, numeric)


def tiny_config(variant, **overrides):
    """The small gradient-check configuration for ``variant``."""
    need_in, need_out = model._STAGES[variant]
    base = dict(
        variant=variant,
        feat_dim=3,
        num_classes=3,
        input_dnn_layers=(4,) if need_in else (),
        cell_dim=4,
        blstm_layers=1,
        output_dnn_layers=(4,) if need_out else (),
        tc=TimeConvSpec(context_frames=7, tc_width=3),
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()


def check_model(config, rows=4, seed=0, name=None, grad_hook=None):
    """Full-stack analytic vs numeric gradient of the mean cross-entropy."""
    rng = np.random.default_rng(seed)
    template = model.init_params(config)
    params = ModelParams(
        (k, rng.normal(0, 0.5, v.shape)) for k, v in template.items()
    )
    batch = rng.normal(0, 1, (rows, config.window_width))
    targets = rng.integers(0, config.num_classes, rows)

    probs, cache = model.forward(params, config, batch)
    _, analytic = model.backward(params, config, cache, targets)
    if grad_hook is not None:
        grad_hook(analytic)

    def loss(p):
        probs, cache = model.forward(p, config, batch)
        return model.backward(p, config, cache, targets)[0]

    numeric = finite_diff_grad(loss, params)
    return _result(name or f"model[{config.variant}]", analytic.blocks, numeric.blocks)


def check_scalar_oracle(rng, draws=100, steps=4, tol=1e-6):
    """lstm_step on 1x1 tensors against the straight-line oracle; some draws hit the clip."""
    worst = 0.0
    clipped = 0
    for k in range(draws):
        scale = 3.0 if k % 4 == 0 else 1.0
        weights = rng.normal(0, scale, 8)
        xs = rng.normal(0, 2.0 if k % 4 == 0 else 1.0, steps)
        if k % 4 == 0:
            # large positive input and candidate weights push the cell over the clip
            weights[[0, 2, 4]] = np.abs(weights[[0, 2, 4]]) + 4.0
            xs = np.abs(xs) + 1.0
        expected = scalar_lstm_oracle(weights, xs)
        p = LstmParams(*(np.array([[w]], np.float64) for w in weights))
        state = LstmStepState.zeros(1, 1, np.float64)
        for x, ref in zip(xs, expected):
            state, _ = layers.lstm_step(p, np.array([[x]], np.float64), state)
            worst = max(worst, abs(state.h[0, 0] - ref[4]), abs(state.c[0, 0] - ref[2]))
            clipped += abs(ref[2]) == 3.0
    result = CheckResult("scalar_lstm_oracle", worst < tol and clipped > 0, worst)
    result.clipped_steps = clipped
    return result


def model_check_configs():
    cfgs = [(v, tiny_config(v)) for v in model.VARIANTS]
    cfgs.append(("blstm[2 layers]", tiny_config("blstm", blstm_layers=2)))
    cfgs.append(("dnn_blstm_dnn[2 layers]", tiny_config("dnn_blstm_dnn", blstm_layers=2)))
    cfgs.append(
        (
            "tc_dnn_blstm_dnn[untied]",
            tiny_config("tc_dnn_blstm_dnn", tc=TimeConvSpec(7, 3, tied_columns=False)),
        )
    )
    return cfgs


def run_checks(seed=0, grad_hook=None):
    """Run the whole suite; ``grad_hook`` may tamper with analytic model gradients."""
    rng = np.random.default_rng(seed)
    results = [check_activation(n, rng) for n in ("sigmoid", "tanh", "relu")]
    results.append(check_softmax_cross_entropy(rng))
    results.append(check_affine(rng, "relu"))
    results.append(check_affine(rng, "none"))
    results.append(check_lstm(rng, T=1, name="lstm_step"))
    results.append(check_lstm(rng, T=5))
    results.append(check_lstm(rng, T=6, scale=1.5, name="lstm_forward[clip active]"))
    results.append(check_blstm_context(rng))
    for name, cfg in model_check_configs():
        results.append(check_model(cfg, seed=seed, name=f"model[{name}]", grad_hook=grad_hook))
    results.append(check_scalar_oracle(rng))
    return results
