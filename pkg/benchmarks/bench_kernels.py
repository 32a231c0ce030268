"""Timing comparison of the numpy kernels against their numba-compiled
twins across small and large problem sizes.

Run as: python benchmarks/bench_kernels.py [--repeats N]

The numba column reads n/a when numba is not importable. Compilation
happens outside the timed region (one warm-up call per kernel/size).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dlsq._kernels import RAW

try:
    import numba

    JIT = {name: numba.njit(cache=True, fastmath=False)(fn) for name, fn in RAW.items()}
except ImportError:
    JIT = None


def make_args(name, n, d, rng):
    A = rng.standard_normal((n, d))
    AT = np.ascontiguousarray(A.T)
    if name == "agent_gradient":
        return (A, AT, rng.standard_normal(n), rng.standard_normal(d))
    if name == "agent_r_matrix":
        return (A, AT, rng.standard_normal((d, d)), 0.1)
    if name == "apc_agent_update":
        P = rng.standard_normal((d, d))
        return (P, rng.standard_normal(d), rng.standard_normal(d), 1.02)
    if name == "bfgs_update":
        M = np.eye(d)
        s = rng.standard_normal(d)
        y = s + 0.1 * rng.standard_normal(d)
        return (M, s, y, float(abs(s @ y) + 1.0))
    if name == "roundoff":
        return (rng.standard_normal(d * d), 1e4)
    raise KeyError(name)


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=7)
    opts = ap.parse_args()

    rng = np.random.default_rng(7)
    sizes = [(64, 8), (610, 190), (900, 900)]
    header = f"{'kernel':<18}{'n':>6}{'d':>6}{'numpy (ms)':>14}{'numba (ms)':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, raw_fn in RAW.items():
        for n, d in sizes:
            args = make_args(name, n, d, rng)
            raw_fn(*args)
            t_np = best_of(raw_fn, args, opts.repeats)
            if JIT is not None:
                JIT[name](*args)  # compile before timing
                t_nb = best_of(JIT[name], args, opts.repeats)
                ratio = f"{t_np / t_nb:9.2f}x" if t_nb > 0 else "n/a"
                nb_col = f"{t_nb * 1e3:14.4f}"
            else:
                nb_col, ratio = f"{'n/a':>14}", f"{'n/a':>10}"
            print(f"{name:<18}{n:>6}{d:>6}{t_np * 1e3:14.4f}{nb_col}{ratio}")


if __name__ == "__main__":
    main()
