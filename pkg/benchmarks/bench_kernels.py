"""Time each hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--n 100] [--t 2000] [--repeat 3]

The first numba call per kernel compiles (or loads the on-disk cache) and is
reported separately from the steady-state timing.
"""
import argparse
import time

import numpy as np

from latentpanel.kernels import backend_module


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n, t, seed):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, t))
    ctrl = rng.random((n, t)) > 0.3
    rows = np.arange(min(n, 8), dtype=np.int64)
    S = np.sort(Y, axis=1)
    return {
        "cross_moments": lambda k: k.cross_moments(Y),
        "discrepancy_matrix": lambda k: k.discrepancy_matrix(Y @ Y.T / t),
        "causal_pair": lambda k: k.causal_pair(Y, ctrl, 0, 1, 30),
        "causal_matrix[8 rows]": lambda k: k.causal_matrix(Y, ctrl, rows, 30),
        "ks_distance": lambda k: k.ks_distance(S[0], S[1]),
        "ks_matrix": lambda k: k.ks_matrix(S),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--t", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    nb, np_ = backend_module("numba"), backend_module("numpy")
    print(f"N={args.n} T={args.t}, best of {args.repeat}")
    print(f"{'kernel':<24}{'first numba':>12}{'numba':>12}{'numpy':>12}{'speedup':>9}")
    for name, run in cases(args.n, args.t, args.seed).items():
        t0 = time.perf_counter()
        run(nb)
        first = time.perf_counter() - t0
        t_nb = _time(lambda: run(nb), args.repeat)
        t_np = _time(lambda: run(np_), args.repeat)
        print(f"{name:<24}{first:>11.4f}s{t_nb:>11.4f}s{t_np:>11.4f}s{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
