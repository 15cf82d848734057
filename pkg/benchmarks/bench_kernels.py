"""Compiled versus plain kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Compares the numba builds against the pure Python / numpy versions that
CACHEBF_NUMBA=0 selects.  The first compiled call (compilation or cache load)
is timed separately.
"""
import argparse
import time

import numpy as np

from cachebf import _kernels
from cachebf.scheduler import greedy_partition, incidence


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_exact(repeat):
    rows = []
    for K, t, s in [(5, 1, 1), (6, 1, 1), (6, 2, 3), (7, 1, 3)]:
        A = incidence(K, t)
        bound = len(greedy_partition(K, t, s)) + 1
        t0 = time.perf_counter()
        _kernels.exact_min_slots(A, s, bound)
        first = time.perf_counter() - t0
        tj, (bj, _) = best_of(lambda: _kernels.exact_min_slots(A, s, bound), repeat)
        tp, (bp, _) = best_of(lambda: _kernels.exact_min_slots_py(A, s, bound), 1)
        assert bj == bp
        rows.append((f"exact_min_slots K={K} t={t} s={s}", first, tj, tp))
    return rows


def bench_sinr(repeat, rng):
    rows = []
    for K, t in [(5, 1), (6, 1), (8, 2)]:
        A = incidence(K, t)
        M = A.shape[0]
        G = rng.exponential(size=(K, M))
        D = 4000
        users = rng.integers(0, K, size=D)
        mask = (rng.random((D, M)) < 0.3).astype(np.int64) * A[:, users].T
        noise = np.ones(K)
        t0 = time.perf_counter()
        _kernels.sinr_sums(G, A, noise, users, mask)
        first = time.perf_counter() - t0
        tj, a = best_of(lambda: _kernels.sinr_sums(G, A, noise, users, mask), repeat)
        tn, b = best_of(lambda: _kernels.sinr_sums_np(G, A, noise, users, mask), repeat)
        assert np.allclose(a, b)
        rows.append((f"sinr_sums K={K} t={t} D={D}", first, tj, tn))
    return rows


def bench_single(repeat, rng):
    C, K, D = 1000, 6, 5
    gains = rng.exponential(size=(C, K))
    th = rng.uniform(0.5, 2.0, size=D)
    users = np.arange(D, dtype=np.int64)
    noise = np.ones(K)
    t0 = time.perf_counter()
    _kernels.min_power_single(gains, th, noise, users)
    first = time.perf_counter() - t0
    tj, a = best_of(lambda: _kernels.min_power_single(gains, th, noise, users), repeat)
    tn, b = best_of(lambda: _kernels.min_power_single_np(gains, th, noise, users), repeat)
    assert np.allclose(a, b)
    return [(f"min_power_single C={C} D={D}", first, tj, tn)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba enabled: {_kernels.NUMBA_ENABLED}")
    print(f"{'kernel':<40} {'first call':>11} {'compiled':>11} {'plain':>11} {'speedup':>8}")
    for name, first, tj, tp in bench_exact(args.repeat) + bench_sinr(args.repeat, rng) + \
            bench_single(args.repeat, rng):
        print(f"{name:<40} {first * 1e3:9.2f}ms {tj * 1e3:9.3f}ms {tp * 1e3:9.3f}ms {tp / tj:7.1f}x")


if __name__ == "__main__":
    main()
