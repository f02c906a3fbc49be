#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times every kernel on shapes representative of MNIST-scale training
(hidden activations 300 x batch, score matrices 10 x batch) and prints the
speedup of the numba backend. Run from the repository root:

    python benchmarks/bench_kernels.py [--batch 500 10000 60000] [--repeats 5]
"""

import argparse
import time

import numpy as np

from flnn import kernels


def time_call(fn, *args, repeats=5):
    fn(*args)  # warmup / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases_for_batch(m, rng):
    V = np.abs(rng.normal(size=(300, m)))
    U = rng.normal(size=(300, m))
    Vs = rng.uniform(0, 1, size=(300, m))
    S = rng.normal(size=(10, m))
    Y = np.zeros((10, m))
    Y[rng.integers(0, 10, m), np.arange(m)] = 1.0
    A = rng.normal(size=(300, 300))
    G = A @ A.T / 300.0 + np.eye(300)
    C = rng.normal(size=(300, m))
    Z0 = np.zeros((300, m))
    step = 1.0 / np.linalg.norm(G, 2)
    return {
        "relu_div_sum": (V, U),
        "sigmoid_div_sum": (Vs, U),
        "softmax_cols": (S,),
        "ce_from_scores": (S, Y),
        "quad_prox_pg": (G, C, Z0, step, 1e-6, 50),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, nargs="+", default=[500, 10000, 60000])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    impls = kernels.implementations()
    if impls["numba"] is None:
        print("numba unavailable; nothing to compare (numpy fallback only)")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'batch':>7} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for m in args.batch:
        cases = cases_for_batch(m, rng)
        for name, case_args in cases.items():
            t_np = time_call(impls["numpy"][name], *case_args, repeats=args.repeats)
            t_nb = time_call(impls["numba"][name], *case_args, repeats=args.repeats)
            print(f"{name:<18} {m:>7} {t_np * 1e3:>9.2f}m {t_nb * 1e3:>9.2f}m "
                  f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
