#!/usr/bin/env python3
"""Benchmark the masked Gauss-Jordan inverse: compiled kernel vs pure Python.

Both backends are timed on the same batch of random pattern-constrained
invertible matrices, their outputs are cross-checked, and the speedup is
reported per matrix size. Run from a checkout or an installed package:

    python benchmarks/bench_gj.py [--sizes 4 8 16 32 64 128] [--reps 5]
"""

import argparse
import time

import numpy as np

from mechsparse._core import BACKEND, gj_inverse
from mechsparse._core.fallback import gj_inverse_masked as gj_python
from mechsparse.graph_algebra import consistency_mask, random_matrix_in_pattern

PIVOT_TOL = 1e-9


def make_cases(size, count, rng):
    """Random invertible matrices supported on random consistency patterns."""
    cases = []
    for _ in range(count):
        support = rng.integers(0, 2, size=(size, size)).astype(np.uint8)
        pattern = consistency_mask(support).mask
        cases.append(random_matrix_in_pattern(pattern, rng))
    return cases


def time_backend(func, cases, reps):
    """Median over reps of the total time to invert every case once."""
    totals = []
    for _ in range(reps):
        start = time.perf_counter()
        for C in cases:
            func(C, PIVOT_TOL)
        totals.append(time.perf_counter() - start)
    return float(np.median(totals)) / len(cases)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[4, 8, 16, 32, 64, 128])
    parser.add_argument("--count", type=int, default=32,
                        help="matrices per size")
    parser.add_argument("--reps", type=int, default=5,
                        help="timing repetitions (median is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if BACKEND != "compiled":
        print("note: compiled kernel unavailable or disabled; the 'selected' "
              "column times the same Python fallback twice")

    rng = np.random.default_rng(args.seed)
    print(f"selected backend: {BACKEND}")
    print(f"{'size':>5} {'python us':>12} {'selected us':>12} "
          f"{'speedup':>8} {'max diff':>10}")
    for size in args.sizes:
        cases = make_cases(size, args.count, rng)
        diff = max(
            float(np.max(np.abs(gj_inverse(C, PIVOT_TOL) - gj_python(C, PIVOT_TOL))))
            for C in cases
        )
        t_python = time_backend(gj_python, cases, args.reps)
        t_selected = time_backend(gj_inverse, cases, args.reps)
        print(f"{size:>5} {t_python * 1e6:>12.1f} {t_selected * 1e6:>12.1f} "
              f"{t_python / t_selected:>8.2f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
