"""Point-cloud containers, spatial search, sampling, and augmentation.

All neighbor machinery orders by squared Euclidean distance with ties
broken by lower point index, so every path (brute force, kd-tree, grid)
returns identical results and repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, IndexRangeError, ShapeError


@dataclass
class PointCloud:
    """N x 3 positions with optional per-point features and labels."""

    positions: np.ndarray
    features: np.ndarray | None = None
    point_labels: np.ndarray | None = None
    cloud_label: int | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeError(f"positions must be (N, 3), got {self.positions.shape}")
        n = self.positions.shape[0]
        if n < 1:
            raise ConfigError("a point cloud needs at least one point")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != n:
                raise ShapeError(
                    f"features must be ({n}, d), got {self.features.shape}"
                )
        if self.point_labels is not None:
            self.point_labels = np.asarray(self.point_labels, dtype=np.int64)
            if self.point_labels.shape != (n,):
                raise ShapeError(
                    f"point_labels must be ({n},), got {self.point_labels.shape}"
                )

    @property
    def n_points(self):
        return self.positions.shape[0]


@dataclass
class NeighborIndex:
    """k nearest neighbors of each query, nondecreasing in distance."""

    queries: np.ndarray    # (M,) indices into the key set (or arange for ad-hoc queries)
    neighbors: np.ndarray  # (M, k) indices into the key set
    k: int


def knn(points, queries, k, method="auto") -> NeighborIndex:
    """Exact k nearest neighbors (self included when the query is a point).

    ``queries`` may be an (M, 3) array of positions or a 1-D array of
    indices into ``points``.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    queries = np.asarray(queries)
    if queries.ndim == 1:
        query_idx = queries.astype(np.int64)
        if query_idx.size and (query_idx.min() < 0 or query_idx.max() >= n):
            raise IndexRangeError(f"query indices out of range [0, {n})")
        query_pos = points[query_idx]
    else:
        query_idx = np.arange(queries.shape[0], dtype=np.int64)
        query_pos = queries
    nbr = kernels.knn(points, query_pos, k, method=method)
    return NeighborIndex(queries=query_idx, neighbors=nbr, k=k)


def farthest_point_sample(points, m, start_index=0, method="auto"):
    """Greedy max-min selection of m point indices from ``points``."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ConfigError(f"sample size must be in [1, {n}], got {m}")
    if not 0 <= start_index < n:
        raise IndexRangeError(f"start index {start_index} out of range [0, {n})")
    return kernels.fps(points, m, start_index, method=method)


def lexicographic_min_index(points):
    """Index of the lexicographically smallest (x, y, z) point.

    Used as the default FPS seed inside models: it is invariant to input
    point order, which keeps whole-network outputs permutation-stable.
    """
    points = np.asarray(points)
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    return int(order[0])


def normalize_unit_ball(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A degenerate cloud (all points coincident) is only centered.
    """
    pos = pc.positions - pc.positions.mean(axis=0)
    radius = np.sqrt((pos ** 2).sum(axis=1).max())
    if radius > 0:
        pos = pos / radius
    return PointCloud(pos, pc.features, pc.point_labels, pc.cloud_label)


def augment_anisotropic_scale(pc: PointCloud, lo, hi, rng) -> PointCloud:
    """Scale each axis by an independent uniform draw from [lo, hi]."""
    if lo > hi:
        raise ConfigError(f"scale range is empty: [{lo}, {hi}]")
    scale = rng.uniform(lo, hi, size=3)
    return PointCloud(pc.positions * scale, pc.features, pc.point_labels, pc.cloud_label)


def augment_translate(pc: PointCloud, offset_range, rng) -> PointCloud:
    """Translate by a uniform draw from [-offset_range, offset_range]^3."""
    if offset_range < 0:
        raise ConfigError(f"translation range must be nonnegative, got {offset_range}")
    shift = rng.uniform(-offset_range, offset_range, size=3)
    return PointCloud(pc.positions + shift, pc.features, pc.point_labels, pc.cloud_label)


def group_features(features: Tensor, nbr: NeighborIndex) -> Tensor:
    """Gather neighbor feature rows into an (M, k, d) tensor.

    Differentiable: the backward scatter-adds into the feature rows.
    """
    return ad.gather_rows(features, nbr.neighbors)
