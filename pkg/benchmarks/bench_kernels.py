#!/usr/bin/env python3
"""Time every hot kernel under both backends and report the speedup.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 5] [--inner 20] [--scale 1.0]

Prints one row per kernel and workload size with the best-of-repeats wall
time for the numpy implementation, the numba implementation (when numba is
importable; the first call is excluded so compilation is not billed), and
the ratio between the two.
"""

import argparse
import time

import numpy as np

from causal_routing.kernels import IMPLEMENTATIONS, NUMBA_AVAILABLE


def build_cases(scale):
    rng = np.random.default_rng(0)
    sizes = {
        "softmax2d": [(256, 64), (4096, 256)],
        "ce": [(256, 16), (4096, 64)],
        "adam": [(10_000,), (1_000_000,)],
        "kmeans": [(2000, 16, 32), (20_000, 64, 64)],
    }
    cases = []
    for rows, cols in sizes["softmax2d"]:
        rows = max(1, int(rows * scale))
        x = rng.standard_normal((rows, cols))
        out = IMPLEMENTATIONS["numpy"]["softmax2d"](x)
        g = rng.standard_normal((rows, cols))
        cases.append(("softmax2d", f"{rows}x{cols}", (x,)))
        cases.append(("softmax2d_bwd", f"{rows}x{cols}", (out, g)))
    for rows, classes in sizes["ce"]:
        rows = max(1, int(rows * scale))
        logits = rng.standard_normal((rows, classes))
        labels = rng.integers(0, classes, size=rows)
        _, probs = IMPLEMENTATIONS["numpy"]["ce_fwd"](logits, labels)
        cases.append(("ce_fwd", f"{rows}x{classes}", (logits, labels)))
        cases.append(("ce_bwd", f"{rows}x{classes}", (probs, labels, 1.0 / rows)))
    for (n,) in sizes["adam"]:
        n = max(1, int(n * scale))
        args = (
            rng.standard_normal(n),
            rng.standard_normal(n),
            np.zeros(n),
            np.zeros(n),
            1e-3,
            0.9,
            0.999,
            1e-8,
            1,
        )
        cases.append(("adam", f"{n}", args))
    for n, d, k in sizes["kmeans"]:
        n = max(k, int(n * scale))
        points = rng.standard_normal((n, d))
        centroids = rng.standard_normal((k, d))
        labels, _ = IMPLEMENTATIONS["numpy"]["kmeans_assign"](points, centroids)
        cases.append(("kmeans_assign", f"{n}x{d},k={k}", (points, centroids)))
        cases.append(("kmeans_update", f"{n}x{d},k={k}", (points, labels, k)))
    return cases


def best_time(fn, args, repeats, inner):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--inner", type=int, default=20)
    parser.add_argument("--scale", type=float, default=1.0,
                        help="multiply workload sizes (0.1 for a quick pass)")
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    if not NUMBA_AVAILABLE:
        print("numba not importable: timing the numpy backend only")

    header = f"{'kernel':<14} {'workload':<16}" + "".join(
        f" {b + ' (ms)':>12}" for b in backends
    )
    if len(backends) == 2:
        header += f" {'speedup':>8}"
    print(header)
    print("-" * len(header))

    for kernel, label, call_args in build_cases(args.scale):
        times = {}
        for backend in backends:
            fn = IMPLEMENTATIONS[backend][kernel]
            fn(*call_args)  # warm up (numba compiles on first call)
            times[backend] = best_time(fn, call_args, args.repeats, args.inner)
        row = f"{kernel:<14} {label:<16}" + "".join(
            f" {times[b] * 1e3:>12.4f}" for b in backends
        )
        if len(backends) == 2:
            row += f" {times['numpy'] / times['numba']:>7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
