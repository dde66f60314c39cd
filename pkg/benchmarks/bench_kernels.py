"""Time the numba kernels against their numpy twins, then a full training step
under each backend.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--skip-train]

Kernel timings exclude the first (compiling) call. Rows for the plain
softmax and the LSTM forward time the jitted variants, which the numba
backend does not dispatch to. The training-step timing
runs in a subprocess per backend because the backend is fixed at import.
"""
import argparse
import os
import subprocess
import sys
import textwrap
from time import perf_counter

import numpy as np

from sure_erc.kernels import numba_impl, numpy_impl


def best_of(fn, args, repeat):
    fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])  # warm-up / compile
    times = []
    for _ in range(repeat):
        fresh = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        t = perf_counter()
        fn(*fresh)
        times.append(perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    rows, width, hidden = 512, 64, 32
    x = rng.standard_normal((rows, width))
    mask = rng.random((rows, width)) > 0.2
    mask[:, 0] = True
    y = numpy_impl.softmax_fwd(x)
    gamma, beta = rng.standard_normal(width), rng.standard_normal(width)
    _, xhat, rstd = numpy_impl.layer_norm_fwd(x, gamma, beta, 1e-5)
    pre = rng.standard_normal((rows, 4 * hidden))
    c = rng.standard_normal((rows, hidden))
    hc, acts = numpy_impl.lstm_cell_fwd(pre, c)
    p = rng.standard_normal(200_000)
    pred, gold = rng.integers(0, 7, 100_000), rng.integers(0, 7, 100_000)
    return [
        ("softmax_fwd", "softmax_fwd_jit", (x,)),
        ("softmax_fwd masked", "softmax_fwd_jit", (x, mask)),
        ("softmax_bwd", "softmax_bwd", (y, x)),
        ("layer_norm_fwd", "layer_norm_fwd", (x, gamma, beta, 1e-5)),
        ("layer_norm_bwd", "layer_norm_bwd", (x, xhat, rstd, gamma)),
        ("lstm_cell_fwd", "lstm_cell_fwd_jit", (pre, c)),
        ("lstm_cell_bwd", "lstm_cell_bwd", (rng.standard_normal(hc.shape), acts, c)),
        ("adamw_step 200k", "adamw_step", (p, p * 0.1, np.zeros_like(p), np.zeros_like(p),
                                           1e-3, 0.9, 0.999, 1e-8, 0.01, 1)),
        ("confusion 100k", "confusion_matrix", (pred, gold, 7)),
    ]


TRAIN_STEP = textwrap.dedent("""
    import numpy as np
    from time import perf_counter
    from sure_erc import kernels
    from sure_erc.classifier import cross_entropy
    from sure_erc.data import SyntheticSpec, collate, generate_synthetic
    from sure_erc.harness import RunConfig, build_model
    from sure_erc.nn import Context
    from sure_erc.optim import AdamW
    from sure_erc.rng import Rng

    header, dialogues, _ = generate_synthetic(SyntheticSpec(dialogues=8, seed=0))
    cfg = RunConfig.from_profile("desk", synthetic={})
    model = build_model(cfg, header, Rng(0))
    opt = AdamW(model.parameters(), cfg.lr)
    batch = collate(dialogues, header.dims)
    rng = Rng(0, 1)

    def step():
        out = model(batch, Context(training=True, rng=rng))
        loss = cross_entropy(out.logits, batch.labels, batch.valid)
        opt.zero_grad()
        loss.backward()
        opt.step()

    step()
    times = []
    for _ in range(REPEAT):
        t = perf_counter()
        step()
        times.append(perf_counter() - t)
    print(kernels.BACKEND, min(times), float(np.median(times)))
""")


def train_step_timing(backend, repeat):
    env = dict(os.environ, SURE_ERC_BACKEND=backend)
    code = TRAIN_STEP.replace("REPEAT", str(repeat))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    _, best, median = out.stdout.split()
    return float(best), float(median)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    if numba_impl is None:
        sys.exit("numba is not installed")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for label, name, case in kernel_cases(rng):
        t_np = best_of(getattr(numpy_impl, name.removesuffix("_jit")), case, args.repeat)
        t_nb = best_of(getattr(numba_impl, name), case, args.repeat)
        print(f"{label:<20} {1e6 * t_np:10.1f} {1e6 * t_nb:10.1f} {t_np / t_nb:8.2f}")

    if not args.skip_train:
        print()
        print(f"{'train step (desk, 8 dialogues)':<32} {'best ms':>8} {'median ms':>10}")
        for backend in ("numpy", "numba"):
            best, median = train_step_timing(backend, max(args.repeat // 5, 3))
            print(f"{backend:<32} {1e3 * best:8.1f} {1e3 * median:10.1f}")


if __name__ == "__main__":
    main()
