"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--batch 128] [--cell 32] [--repeat 200]

Kernel rows call the ``*_nb`` and ``*_np`` functions side by side in one
process. The last row times a full forward+backward minibatch of the default
model in two subprocesses, one with ``TCBLSTM_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tcblstm import kernels
from tcblstm._backend import HAVE_NUMBA

STEP_SNIPPET = """
import timeit, numpy as np
from tcblstm.model import ModelConfig, init_params, forward, backward
cfg = ModelConfig(dnn_init_std=0.1, lstm_init_range=0.1)
p = init_params(cfg)
rng = np.random.default_rng(0)
x = rng.standard_normal((BATCH, cfg.tc.context_frames * cfg.feat_dim)).astype(np.float32)
y = rng.integers(0, cfg.num_classes, BATCH)
def step():
    _, cache = forward(p, cfg, x)
    backward(p, cfg, cache, y)
step()
print(min(timeit.repeat(step, number=1, repeat=REPEAT)))
"""


def best_of(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch, cell, rng):
    z = rng.standard_normal((batch, 4 * cell)).astype(np.float32)
    c_prev = rng.standard_normal((batch, cell)).astype(np.float32)
    fwd = kernels.lstm_cell_forward_np(z, c_prev, 3.0)
    gates, _, _, tanh_c, mask = fwd
    dh = rng.standard_normal((batch, cell)).astype(np.float32)
    dc = rng.standard_normal((batch, cell)).astype(np.float32)
    logits = rng.standard_normal((batch * 8, 4)).astype(np.float32)
    return {
        "sigmoid": ((z,), kernels.sigmoid_np, kernels.sigmoid_nb),
        "softmax_rows": ((logits,), kernels.softmax_rows_np, kernels.softmax_rows_nb),
        "lstm_cell_forward": ((z, c_prev, 3.0), kernels.lstm_cell_forward_np, kernels.lstm_cell_forward_nb),
        "lstm_cell_backward": (
            (dh, dc, gates, c_prev, tanh_c, mask),
            kernels.lstm_cell_backward_np,
            kernels.lstm_cell_backward_nb,
        ),
    }


def model_step(batch, repeat, disable):
    env = dict(os.environ)
    env.pop("TCBLSTM_DISABLE_NUMBA", None)
    if disable:
        env["TCBLSTM_DISABLE_NUMBA"] = "1"
    code = STEP_SNIPPET.replace("BATCH", str(batch)).replace("REPEAT", str(repeat))
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--cell", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-model", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, (inputs, f_np, f_nb) in kernel_cases(args.batch, args.cell, rng).items():
        t_np = best_of(lambda: f_np(*inputs), args.repeat)
        t_nb = best_of(lambda: f_nb(*inputs), args.repeat)
        print(f"{name:<22}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")

    if not args.skip_model:
        reps = max(args.repeat // 20, 3)
        t_np = model_step(args.batch, reps, disable=True)
        t_nb = model_step(args.batch, reps, disable=False)
        print(f"{'model fwd+bwd':<22}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
