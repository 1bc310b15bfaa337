#!/usr/bin/env python3
"""Compare the compiled kernel lane against the NumPy/SciPy fallback.

Runs each hot kernel (kNN, farthest-point sampling, neighborhood
attention aggregation) in both lanes over a size sweep and prints a
table of median wall times plus the speedup. Results also verify that
the lanes agree (indices exactly, aggregation to 1e-12).

Usage: python benchmarks/bench_kernels.py [--sizes 1024,4096,16384] [--k 16]
"""

import argparse
import json
import time

import numpy as np

from upa import kernels


def median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run(sizes, k, heads, d, repeats, seed):
    if not kernels.COMPILED_AVAILABLE:
        raise SystemExit("compiled extension unavailable; build with pip install -e .")
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        pts = rng.uniform(-1, 1, (n, 3))
        scores = rng.standard_normal((n, k, heads))
        values = rng.standard_normal((n, d))

        idx_grid = kernels.knn(pts, pts, k, method="grid")
        idx_kd = kernels.knn(pts, pts, k, method="kdtree")
        assert np.array_equal(idx_grid, idx_kd), "kNN lanes disagree"
        agg_c = kernels.attend(scores, values, idx_grid, heads, method="compiled")
        agg_f = kernels.attend(scores, values, idx_grid, heads, method="numpy")
        assert np.abs(agg_c - agg_f).max() < 1e-12, "attend lanes disagree"

        m = max(1, n // 4)
        row = {
            "n": n,
            "knn_grid_compiled": median_time(
                lambda: kernels.knn(pts, pts, k, method="grid"), repeats),
            "knn_kdtree_fallback": median_time(
                lambda: kernels.knn(pts, pts, k, method="kdtree"), repeats),
            "knn_brute_reference": median_time(
                lambda: kernels.knn(pts, pts, k, method="brute"), repeats),
            "fps_compiled": median_time(
                lambda: kernels.fps(pts, m, 0, method="compiled"), repeats),
            "fps_fallback": median_time(
                lambda: kernels.fps(pts, m, 0, method="numpy"), repeats),
            "attend_compiled": median_time(
                lambda: kernels.attend(scores, values, idx_grid, heads,
                                       method="compiled"), repeats),
            "attend_fallback": median_time(
                lambda: kernels.attend(scores, values, idx_grid, heads,
                                       method="numpy"), repeats),
        }
        rows.append(row)
    return rows


def print_table(rows):
    pairs = [("knn", "knn_grid_compiled", "knn_kdtree_fallback"),
             ("fps", "fps_compiled", "fps_fallback"),
             ("attend", "attend_compiled", "attend_fallback")]
    header = f"{'n':>7}"
    for name, _, _ in pairs:
        header += f" {name + ' c[ms]':>12} {name + ' f[ms]':>12} {'x':>6}"
    print(header)
    for row in rows:
        line = f"{row['n']:>7}"
        for _, c_key, f_key in pairs:
            c, f = row[c_key], row[f_key]
            line += f" {c * 1e3:>12.3f} {f * 1e3:>12.3f} {f / c:>6.2f}"
        print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="1024,4096,16384")
    parser.add_argument("--k", type=int, default=16)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s]
    rows = run(sizes, args.k, args.heads, args.d, args.repeats, args.seed)
    print_table(rows)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
