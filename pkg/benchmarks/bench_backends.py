"""Timing comparison of the numba kernels against the pure-NumPy fallbacks.

Runs every kernel pair on identical inputs, reports best-of-``--repeats``
wall times plus the speedup, and checks that the two backends agree to
tight relative tolerances (the Gaussian transform is bitwise on its central
branch; reductions may differ in the last bits through summation order).
Exits cleanly when numba is not importable, timing only the NumPy side.

Usage:  python3 benchmarks/bench_backends.py [--batch 200000] [--repeats 5]
"""

import argparse
import sys
import time

import numpy as np

from kronprobe import _accel


def _best_time(fn, args, repeats):
    fn(*args)  # warmup; also triggers JIT compilation for numba kernels
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _rel_diff(a, b):
    scale = max(float(np.max(np.abs(a))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def _cases(batch):
    rng = np.random.default_rng(42)
    u = np.clip(rng.random(4 * batch), 1e-16, 1.0 - 1e-16)
    left = rng.standard_normal((batch, 50))
    right = rng.standard_normal((batch, 50))
    mid = rng.standard_normal((50, 50))
    x = rng.standard_normal((batch, 100))
    mat = rng.standard_normal((100, 100))
    expand_batch = max(batch // 10, 1)
    return (
        ("gauss_from_uniform", (u,)),
        ("rank_one_expand", (left[:expand_batch], right[:expand_batch])),
        ("bilinear_form_batch", (left, mid, right)),
        ("row_norms_sq", (x,)),
        ("quad_form_batch", (mat, x)),
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=200_000, help="rows per batch")
    parser.add_argument("--repeats", type=int, default=5, help="timed repetitions")
    args = parser.parse_args(argv)

    try:
        numba_kernels = _accel._build_numba_kernels()
    except ImportError:
        numba_kernels = None

    print(f"active package backend: {_accel.active_backend()}")
    header = f"{'kernel':<22} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9} {'rel diff':>10}"
    print(header)
    print("-" * len(header))

    for name, case_args in _cases(args.batch):
        numpy_fn = _accel.NUMPY_KERNELS[name]
        t_numpy = _best_time(numpy_fn, case_args, args.repeats)
        if numba_kernels is None:
            print(f"{name:<22} {t_numpy * 1e3:>12.3f} {'-':>12} {'-':>9} {'-':>10}")
            continue
        numba_fn = numba_kernels[name]
        t_numba = _best_time(numba_fn, case_args, args.repeats)
        diff = _rel_diff(numpy_fn(*case_args), numba_fn(*case_args))
        if diff > 1e-12:
            print(f"backend mismatch on {name}: rel diff {diff:.3e}", file=sys.stderr)
            return 1
        print(
            f"{name:<22} {t_numpy * 1e3:>12.3f} {t_numba * 1e3:>12.3f} "
            f"{t_numpy / t_numba:>8.2f}x {diff:>10.1e}"
        )

    if numba_kernels is None:
        print("numba not importable; timed the NumPy fallback only")
    return 0


if __name__ == "__main__":
    sys.exit(main())
