"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 50] [--out results.csv]

Times each kernel on a fixed (K, rows, classes) batch, then one full
intra-distillation training run on the bundled toy config, under every
available backend. Prints a CSV table with the speedup over the numpy
fallback.
"""
from __future__ import annotations

import argparse
import sys
import time
import timeit

import numpy as np

from intradistill import kernels
from intradistill.config import apply_overrides, load_config
from intradistill.trainer import train_intra_distill

EPS = 1e-12


def kernel_cases(k: int, rows: int, classes: int):
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(rows, classes))
    p = rng.dirichlet(np.ones(classes), size=(k, rows))
    out = kernels.backend_module("python").log_softmax(logits)
    grad = rng.normal(size=out.shape)
    return {
        "log_softmax": lambda: kernels.log_softmax(logits),
        "log_softmax_backward": lambda: kernels.log_softmax_backward(out, grad),
        "x_divergence": lambda: kernels.x_divergence(p, EPS),
        "js_divergence": lambda: kernels.js_divergence(p, EPS),
        "reverse_half": lambda: kernels.reverse_half(p, EPS),
        "pairwise_kl_sum": lambda: kernels.pairwise_kl_sum(p, EPS),
    }


def time_kernels(repeat: int, k: int, rows: int, classes: int) -> dict[str, float]:
    cases = kernel_cases(k, rows, classes)
    out = {}
    for name, fn in cases.items():
        fn()
        # best of 5 rounds, microseconds per call
        out[name] = min(timeit.repeat(fn, number=repeat, repeat=5)) / repeat * 1e6
    return out


def time_training(steps: int) -> float:
    cfg = apply_overrides(load_config("toy_classification"), ["mode=intra", f"trainer.steps={steps}"])
    data = cfg.make_data()
    started = time.perf_counter()
    train_intra_distill(cfg.train_config(), data)
    return (time.perf_counter() - started) * 1e3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--classes", type=int, default=32)
    ap.add_argument("--train-steps", type=int, default=300)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only", file=sys.stderr)
    results: dict[str, dict[str, float]] = {}
    for name in backends:
        with kernels.use_backend(name):
            row = time_kernels(args.repeat, args.k, args.rows, args.classes)
            row["train_run_ms"] = time_training(args.train_steps)
        results[name] = row

    cols = list(results["python"])
    lines = ["backend," + ",".join(cols)]
    for name, row in results.items():
        lines.append(name + "," + ",".join(f"{row[c]:.2f}" for c in cols))
    if "cython" in results:
        speed = [results["python"][c] / results["cython"][c] for c in cols]
        lines.append("speedup," + ",".join(f"{s:.2f}" for s in speed))
    text = "\n".join(lines) + "\n"
    print(f"# kernel times in us/call (K={args.k}, rows={args.rows}, classes={args.classes}); "
          f"train_run_ms = {args.train_steps} intra updates")
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
