#!/usr/bin/env python3
"""Benchmark the compiled pixel kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--frame 256] [--repeat 5]

Both implementations are loaded directly (bypassing the import-time
selector) so one process can time them side by side.
"""

import argparse
import random
import time

from siat._kernels import IMPLEMENTATION, pure

try:
    from siat._kernels import _native as native
except ImportError:
    native = None


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frame", type=int, default=256,
                        help="square frame edge length in pixels")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    edge = args.frame
    npix = edge * edge
    rng = random.Random(1)
    gray = rng.randbytes(npix)
    gray2 = rng.randbytes(npix)
    rgb = rng.randbytes(npix * 3)

    cases = [
        ("gray_from_rgb24", lambda impl: impl.gray_from_rgb24(rgb, npix)),
        ("adjust_u8", lambda impl: impl.adjust_u8(gray, 1.2, -10.0)),
        ("resize_nearest /2", lambda impl: impl.resize_nearest(
            gray, edge, edge, 1, edge // 2, edge // 2)),
        ("resize_bilinear x2", lambda impl: impl.resize_bilinear(
            gray, edge, edge, 1, edge * 2, edge * 2)),
        ("sum_abs_diff", lambda impl: impl.sum_abs_diff(gray, gray2)),
        ("histogram_counts 16", lambda impl: impl.histogram_counts(gray, 16)),
    ]

    print(f"frame {edge}x{edge} GRAY8 ({npix} px), best of {args.repeat}")
    print(f"active implementation at import time: {IMPLEMENTATION}")
    if native is None:
        print("compiled extension not built; timing the fallback only")
    header = f"{'kernel':<22}{'pure (ms)':>12}{'native (ms)':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        t_pure = timeit(lambda: call(pure), args.repeat)
        if native is not None:
            got_native = call(native)
            assert got_native == call(pure), f"{name}: implementations disagree"
            t_native = timeit(lambda: call(native), args.repeat)
            print(f"{name:<22}{t_pure * 1e3:>12.2f}{t_native * 1e3:>14.3f}"
                  f"{t_pure / t_native:>9.0f}x")
        else:
            print(f"{name:<22}{t_pure * 1e3:>12.2f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
