"""Timing harness for the scatter-add kernels.

Compares the compiled kernel against the pure-numpy ``np.add.at`` fallback
on batch shapes typical of training (many directed edges, modest hidden
width). Both paths run in one process; the compiled path is warmed up first
so JIT compilation does not pollute the numbers.

Run:  python3 benchmarks/bench_kernels.py [--repeats 30]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from envgnn.kernels import HAS_NUMBA, scatter_add_rows_numba, scatter_add_rows_numpy

CASES = (
    ("small batch", 2_000, 500, 32),
    ("medium batch", 20_000, 4_000, 64),
    ("large batch", 200_000, 30_000, 64),
    ("wide features", 50_000, 8_000, 256),
)


def time_fn(fn, values, index, size, repeats):
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(values, index, size)
        samples.append(time.perf_counter() - start)
    return min(samples), statistics.median(samples)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"numba available: {HAS_NUMBA}")
    header = f"{'case':14s} {'m':>8s} {'d':>4s} {'numpy (ms)':>12s}"
    if HAS_NUMBA:
        header += f" {'numba (ms)':>12s} {'speedup':>8s}"
    print(header)

    for name, m, size, d in CASES:
        values = rng.standard_normal((m, d))
        index = rng.integers(0, size, size=m)
        if HAS_NUMBA:
            # Warm-up triggers compilation and checks agreement.
            jit_out = scatter_add_rows_numba(values, index, size)
            ref = scatter_add_rows_numpy(values, index, size)
            if not np.allclose(jit_out, ref, atol=1e-9):
                raise AssertionError(f"kernel mismatch on case {name!r}")
        np_best, _ = time_fn(scatter_add_rows_numpy, values, index, size, args.repeats)
        line = f"{name:14s} {m:8d} {d:4d} {np_best * 1e3:12.3f}"
        if HAS_NUMBA:
            nb_best, _ = time_fn(scatter_add_rows_numba, values, index, size, args.repeats)
            line += f" {nb_best * 1e3:12.3f} {np_best / nb_best:7.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
