"""Dense 2-D kernels every layer is built from.

A "tensor" here is a plain 2-D C-contiguous :class:`numpy.ndarray`. Training
runs in float32; the gradient checker feeds float64 through the same
functions, so nothing in this module hard-codes a dtype.
"""

import numpy as np

from . import kernels
from .errors import LabelError, ParameterError, ShapeError

DTYPE = np.float32
PROB_FLOOR = 1e-12


def as_tensor(x, dtype=DTYPE):
    """Coerce to a C-contiguous 2-D array (1-D input becomes a single row)."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"tensor must be 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x):
    return kernels.sigmoid(x)


def tanh_op(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0)


def clip(x, limit):
    if not limit > 0:
        raise ParameterError(f"clip limit must be positive, got {limit}")
    return np.clip(x, -limit, limit)


def softmax_rows(logits):
    return kernels.softmax_rows(np.ascontiguousarray(logits))


def cross_entropy(probs, targets):
    """Mean negative log-likelihood and the fused softmax+CE logit gradient.

    ``probs`` must come from :func:`softmax_rows`; the returned gradient is
    with respect to the logits that produced it, i.e. ``(probs - onehot) / rows``.
    """
    targets = np.asarray(targets)
    rows, cols = probs.shape
    if targets.shape != (rows,):
        raise ShapeError(f"expected {rows} targets, got shape {targets.shape}")
    bad = np.flatnonzero((targets < 0) | (targets >= cols))
    if bad.size:
        r = int(bad[0])
        raise LabelError(f"row {r}: target {int(targets[r])} outside [0, {cols})")
    idx = np.arange(rows)
    picked = np.maximum(probs[idx, targets].astype(np.float64), PROB_FLOOR)
    loss = float(-np.log(picked).mean())
    grad = probs.copy()
    grad[idx, targets] -= 1
    grad /= rows
    return loss, grad
