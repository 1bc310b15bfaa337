"""Wall-time scaling of attention forward passes.

Times one full variant forward (neighbor search included for the local
variants) over a size sweep and fits the growth exponent by least
squares on log-log points. Peak transient allocation is tracked with
tracemalloc against preallocated inputs/outputs, so it measures scratch
memory rather than the linearly growing buffers themselves.
"""

from __future__ import annotations

import json
import time
import tracemalloc

import numpy as np

from ..attention import BlockParams, attention_block
from ..autodiff import Tensor
from ..errors import ConfigError
from ..geometry import knn

BENCH_VARIANTS = {
    "local-upa": "upa-plain",
    "gated-upa": "upa-gated",
    "positional-upa": "upa-positional",
    "global-sa": "global-sa",
    "local-sa": "local-sa",
    "mean-pool": "mean-pool",
    "max-pool": "max-pool",
}


def _setup(variant, n, k, heads, d_feature, seed, knn_method):
    rng = np.random.default_rng([seed, n])
    positions = rng.standard_normal((n, 3))
    positions /= np.maximum(np.linalg.norm(positions, axis=1, keepdims=True), 1e-9)
    positions *= rng.uniform(0.2, 1.0, size=(n, 1))
    x = rng.standard_normal((n, d_feature))
    params = BlockParams.create(np.random.default_rng(seed), d_feature,
                                BENCH_VARIANTS[variant], heads=heads)
    return positions, x, params


def _forward(variant, positions, x, params, k, knn_method):
    nbr = None
    if BENCH_VARIANTS[variant] != "global-sa":
        nbr = knn(positions, np.arange(positions.shape[0], dtype=np.int64),
                  k, method=knn_method)
    out = attention_block(Tensor(x), positions, nbr, params)
    return out.features.data


def bench(variant, sizes, k=16, heads=4, d_feature=64, repeats=5, seed=0,
          knn_method="auto", out_path=None, log=None):
    """Median-of-repeats forward time per size plus a fitted exponent."""
    if variant not in BENCH_VARIANTS:
        raise ConfigError(f"unknown bench variant {variant!r}; choose from {sorted(BENCH_VARIANTS)}")
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ConfigError(f"sizes must be ascending, got {sizes}")
    rows = []
    for n in sizes:
        positions, x, params = _setup(variant, n, k, heads, d_feature, seed, knn_method)
        k_eff = min(k, n)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            _forward(variant, positions, x, params, k_eff, knn_method)
            times.append(time.perf_counter() - t0)
        tracemalloc.start()
        _forward(variant, positions, x, params, k_eff, knn_method)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        row = {"n": int(n), "median_seconds": float(np.median(times)),
               "times": [float(t) for t in times], "peak_bytes": int(peak)}
        rows.append(row)
        if log:
            log(row)
    result = {
        "variant": variant, "k": k, "heads": heads, "d_feature": d_feature,
        "repeats": repeats, "rows": rows,
        "fitted_exponent": fit_exponent(rows),
    }
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(result, fh, indent=2)
    return result


def fit_exponent(rows):
    """Least-squares slope of log(time) against log(n)."""
    n = np.log([r["n"] for r in rows])
    t = np.log([r["median_seconds"] for r in rows])
    slope, _ = np.polyfit(n, t, 1)
    return float(slope)
