"""Hierarchical point-cloud encoder/decoder with pluggable attention.

A minimal sample-group-pool pyramid: each encoder stage picks centroids
by farthest-point sampling, groups k neighbors, runs a shared MLP on
(relative position, feature) pairs and max-pools per group. Attention
blocks slot in after any stage. Segmentation adds a mirrored decoder
that interpolates coarse features back onto finer levels (inverse
squared-distance over 3 nearest) with skip connections.

FPS is seeded from the lexicographically smallest point so whole-network
outputs are invariant to input point order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import VARIANTS, BlockParams, attention_block
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .geometry import (
    NeighborIndex,
    PointCloud,
    farthest_point_sample,
    knn,
    lexicographic_min_index,
)
from .nn import LinearParams, MlpParams, collect_parameters

TASKS = ("classification", "part-segmentation", "scene-segmentation")


@dataclass
class BlockConfig:
    """One attention block inserted after an encoder stage."""

    variant: str = "upa-plain"
    heads: int = 1
    k: int = 16
    components: tuple = ("unary", "pairwise")

    def __post_init__(self):
        self.components = tuple(self.components)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown block variant {self.variant!r}")
        if self.k < 1:
            raise ConfigError(f"block k must be positive, got {self.k}")

    def to_dict(self):
        return {"variant": self.variant, "heads": self.heads, "k": self.k,
                "components": list(self.components)}

    @classmethod
    def from_dict(cls, d):
        return cls(variant=d.get("variant", "upa-plain"), heads=d.get("heads", 1),
                   k=d.get("k", 16), components=tuple(d.get("components", ("unary", "pairwise"))))


@dataclass
class StageConfig:
    """One sample-group-pool encoder stage."""

    points_out: int
    k_group: int
    mlp_widths: list
    attention_after: list = field(default_factory=list)  # list of BlockConfig, applied in order

    def to_dict(self):
        return {"points_out": self.points_out, "k_group": self.k_group,
                "mlp_widths": list(self.mlp_widths),
                "attention_after": [b.to_dict() for b in self.attention_after]}

    @classmethod
    def from_dict(cls, d):
        return cls(points_out=d["points_out"], k_group=d["k_group"],
                   mlp_widths=list(d["mlp_widths"]),
                   attention_after=[BlockConfig.from_dict(b) for b in d.get("attention_after", [])])


@dataclass
class ModelConfig:
    task: str
    n_classes: int
    stages: list
    d_input: int = 3               # input feature width (positions by default)
    head_widths: list = field(default_factory=lambda: [64])
    fp_widths: list = field(default_factory=list)  # per decoder stage, inner widths

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        counts = [s.points_out for s in self.stages]
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ConfigError(f"stage point counts must be nonincreasing, got {counts}")
        if self.task != "classification" and not self.fp_widths:
            self.fp_widths = [[64] for _ in self.stages]
        if self.task != "classification" and len(self.fp_widths) != len(self.stages):
            raise ConfigError("segmentation needs one decoder width list per encoder stage")

    def to_dict(self):
        return {"task": self.task, "n_classes": self.n_classes,
                "d_input": self.d_input,
                "stages": [s.to_dict() for s in self.stages],
                "head_widths": list(self.head_widths),
                "fp_widths": [list(w) for w in self.fp_widths]}

    @classmethod
    def from_dict(cls, d):
        return cls(task=d["task"], n_classes=d["n_classes"],
                   stages=[StageConfig.from_dict(s) for s in d["stages"]],
                   d_input=d.get("d_input", 3),
                   head_widths=list(d.get("head_widths", [64])),
                   fp_widths=[list(w) for w in d.get("fp_widths", [])])


class Model:
    """Config plus every learned tensor, with task-specific forwards."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float64):
        self.config = config
        self.dtype = dtype
        self.stage_mlps = []
        self.stage_blocks = []
        d = config.d_input
        for stage in config.stages:
            widths = [3 + d] + list(stage.mlp_widths)
            self.stage_mlps.append(MlpParams.create(rng, widths, dtype=dtype))
            d = widths[-1]
            blocks = [
                BlockParams.create(rng, d, b.variant, heads=b.heads,
                                   components=b.components, dtype=dtype)
                for b in stage.attention_after
            ]
            self.stage_blocks.append(blocks)
        self.fp_mlps = None
        if config.task == "classification":
            self.head = MlpParams.create(
                rng, [2 * d] + list(config.head_widths) + [config.n_classes], dtype=dtype
            )
        else:
            stage_out = [config.d_input] + [s.mlp_widths[-1] for s in config.stages]
            self.fp_mlps = []
            d_coarse = stage_out[-1]
            for level in range(len(config.stages) - 1, -1, -1):
                d_skip = stage_out[level]
                widths = [d_coarse + d_skip] + list(config.fp_widths[level])
                self.fp_mlps.append(MlpParams.create(rng, widths, dtype=dtype))
                d_coarse = widths[-1]
            self.head = MlpParams.create(
                rng, [d_coarse] + list(config.head_widths) + [config.n_classes], dtype=dtype
            )

    def named_parameters(self):
        for i, mlp in enumerate(self.stage_mlps):
            yield from mlp.named_parameters(f"stage{i}.mlp.")
            for j, block in enumerate(self.stage_blocks[i]):
                yield from block.named_parameters(f"stage{i}.block{j}.")
        if self.fp_mlps is not None:
            for i, mlp in enumerate(self.fp_mlps):
                yield from mlp.named_parameters(f"fp{i}.")
        yield from self.head.named_parameters("head.")

    def parameters(self):
        return collect_parameters(self.named_parameters())


def set_abstraction(positions, features: Tensor, stage: StageConfig,
                    mlp: MlpParams, knn_method="auto"):
    """Sample centroids, group neighbors, MLP, max-pool.

    Returns (centroid positions, pooled features). Differentiable in the
    features; positions are data.
    """
    n = positions.shape[0]
    if stage.points_out > n:
        raise ConfigError(f"cannot sample {stage.points_out} centroids from {n} points")
    k = min(stage.k_group, n)
    start = lexicographic_min_index(positions)
    centroid_idx = farthest_point_sample(positions, stage.points_out, start)
    nbr = knn(positions, centroid_idx, k, method=knn_method)
    centroid_pos = positions[centroid_idx]
    rel = positions[nbr.neighbors] - centroid_pos[:, None, :]
    grouped = ad.gather_rows(features, nbr.neighbors)
    stacked = ad.concat_lastdim([Tensor(rel.astype(features.dtype)), grouped])
    transformed = mlp(stacked)
    pooled = ad.max_reduce(transformed, axis=1)
    return centroid_pos, pooled


def feature_propagation(coarse_positions, coarse_features: Tensor,
                        fine_positions, fine_skip: Tensor | None,
                        mlp: MlpParams, knn_method="auto"):
    """Interpolate coarse features onto fine points and refine.

    Inverse squared-distance weights over the 3 nearest coarse points
    (exact one-hot when a fine point coincides with a coarse one),
    concatenated with skip features and passed through a per-point MLP.
    """
    m = coarse_positions.shape[0]
    if m < 1:
        raise ConfigError("feature propagation needs a nonempty coarse cloud")
    k = min(3, m)
    nbr = knn(coarse_positions, np.asarray(fine_positions, dtype=np.float64), k,
              method=knn_method)
    d2 = ((fine_positions[:, None, :] - coarse_positions[nbr.neighbors]) ** 2).sum(axis=2)
    exact = d2[:, 0] == 0.0  # rows sorted by distance: first entry is the closest
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d2
        weights = inv / inv.sum(axis=1, keepdims=True)
    weights[exact] = 0.0
    weights[exact, 0] = 1.0
    gathered = ad.gather_rows(coarse_features, nbr.neighbors)
    interp = ad.sum_reduce(
        ad.mul_bcast_last(gathered, Tensor(weights.astype(coarse_features.dtype))), axis=1
    )
    if fine_skip is not None:
        interp = ad.concat_lastdim([interp, fine_skip])
    return mlp(interp)


def _initial_features(pc: PointCloud, config: ModelConfig, dtype):
    if pc.features is not None:
        feats = pc.features
    else:
        feats = pc.positions
    if feats.shape[1] != config.d_input:
        raise ConfigError(
            f"model expects {config.d_input}-wide input features, got {feats.shape[1]}"
        )
    return Tensor(feats.astype(dtype))


def _run_encoder(pc: PointCloud, model: Model, capture, knn_method):
    """Shared encoder walk; returns per-level (positions, features) and maps."""
    positions = pc.positions
    feats = _initial_features(pc, model.config, model.dtype)
    levels = [(positions, feats)]
    maps = []
    for i, stage in enumerate(model.config.stages):
        positions, feats = set_abstraction(positions, feats, stage,
                                           model.stage_mlps[i], knn_method)
        for j, block_cfg in enumerate(stage.attention_after):
            m = positions.shape[0]
            nbr = None
            if block_cfg.variant != "global-sa":
                nbr = knn(positions, np.arange(m, dtype=np.int64),
                          min(block_cfg.k, m), method=knn_method)
            out = attention_block(feats, positions, nbr,
                                  model.stage_blocks[i][j], capture=capture)
            feats = out.features
            if capture and out.maps:
                maps.extend((i + 1, cap) for cap in out.maps)
        levels.append((positions, feats))
    return levels, maps


def forward_classification(pc: PointCloud, model: Model, capture=False,
                           knn_method="auto"):
    """Logits of shape (1, n_classes); max+mean pooled over final points."""
    if model.config.task != "classification":
        raise ConfigError(f"model task is {model.config.task!r}, not classification")
    levels, maps = _run_encoder(pc, model, capture, knn_method)
    feats = levels[-1][1]
    d = feats.data.shape[1]
    pooled = ad.concat_lastdim([
        ad.reshape(ad.max_reduce(feats, axis=0), (1, d)),
        ad.reshape(ad.mean_reduce(feats, axis=0), (1, d)),
    ])
    logits = model.head(pooled)
    return (logits, maps) if capture else (logits, None)


def forward_segmentation(pc: PointCloud, model: Model, capture=False,
                         knn_method="auto"):
    """Per-point logits of shape (N, n_classes)."""
    if model.config.task == "classification":
        raise ConfigError("model task is classification, not segmentation")
    levels, maps = _run_encoder(pc, model, capture, knn_method)
    positions, feats = levels[-1]
    for step, level in enumerate(range(len(levels) - 2, -1, -1)):
        fine_positions, fine_skip = levels[level]
        feats = feature_propagation(positions, feats, fine_positions, fine_skip,
                                    model.fp_mlps[step], knn_method)
        positions = fine_positions
    logits = model.head(feats)
    return (logits, maps) if capture else (logits, None)
