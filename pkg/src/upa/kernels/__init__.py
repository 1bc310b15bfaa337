"""Hot-kernel dispatch: compiled Cython lane with a NumPy/SciPy fallback.

The compiled extension is optional; when it is missing (or the
UPA_FORCE_FALLBACK=1 environment variable is set) every kernel routes to
the fallback lane. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError
from . import fallback

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

COMPILED_AVAILABLE = _ckernels is not None


def _use_compiled():
    return COMPILED_AVAILABLE and os.environ.get("UPA_FORCE_FALLBACK") != "1"


def active_lane():
    return "compiled" if _use_compiled() else "fallback"


def _f64c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def knn(points, queries, k, method="auto"):
    """Exact k nearest neighbors of each query among points.

    method: "auto" (grid when compiled, else kd-tree), "grid", "kdtree",
    or "brute". All methods return identical (M, k) int64 indices sorted
    by (squared distance, index).
    """
    points = _f64c(points)
    queries = _f64c(queries)
    if method == "auto":
        method = "grid" if _use_compiled() else "kdtree"
    if method == "grid":
        if not COMPILED_AVAILABLE:
            raise ConfigError("grid kNN needs the compiled extension; use kdtree or brute")
        return _ckernels.knn_grid(points, queries, int(k))
    if method == "kdtree":
        return fallback.knn_kdtree(points, queries, int(k))
    if method == "brute":
        return fallback.knn_brute(points, queries, int(k))
    raise ConfigError(f"unknown kNN method {method!r}")


def fps(points, m, start, method="auto"):
    """Greedy farthest-point sampling of m indices starting at start."""
    points = _f64c(points)
    if method == "auto":
        method = "compiled" if _use_compiled() else "numpy"
    if method == "compiled":
        if not COMPILED_AVAILABLE:
            raise ConfigError("compiled FPS is unavailable; use method='numpy'")
        return _ckernels.fps(points, int(m), int(start))
    if method == "numpy":
        return fallback.fps(points, int(m), int(start))
    raise ConfigError(f"unknown FPS method {method!r}")


def attend(scores, values, idx, heads, out=None, method="auto"):
    """Multi-head softmax aggregation over neighbor sets (inference path)."""
    scores = _f64c(scores)
    values = _f64c(values)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if method == "auto":
        method = "compiled" if _use_compiled() else "numpy"
    if method == "compiled":
        if not COMPILED_AVAILABLE:
            raise ConfigError("compiled attend is unavailable; use method='numpy'")
        if out is None:
            out = np.empty((scores.shape[0], values.shape[1]), dtype=np.float64)
        _ckernels.attend(scores, values, idx, int(heads), out)
        return out
    if method == "numpy":
        return fallback.attend(scores, values, idx, int(heads), out=out)
    raise ConfigError(f"unknown attend method {method!r}")
