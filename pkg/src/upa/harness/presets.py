"""Canonical experiment configurations.

The classification smoke protocol fixes everything (dataset seed, model
widths, optimizer, epochs) so that runs are reproducible bit-for-bit;
the attention-free twin differs only in the attention blocks.
"""

from __future__ import annotations

from ..backbone import BlockConfig, ModelConfig, StageConfig
from .synthetic import DatasetSpec
from .training import TrainConfig

SMOKE_SEED = 0
SMOKE_EPOCHS = 5


def classification_smoke(with_attention=True, variant="upa-gated", heads=4, k=16,
                         epochs=SMOKE_EPOCHS, seed=SMOKE_SEED) -> TrainConfig:
    """4-class shapes, 1024 points, 800 train / 200 test."""
    def blocks():
        if not with_attention:
            return []
        return [BlockConfig(variant=variant, heads=heads, k=k)]

    model = ModelConfig(
        task="classification",
        n_classes=4,
        stages=[
            StageConfig(points_out=192, k_group=16, mlp_widths=[32, 64],
                        attention_after=blocks()),
            StageConfig(points_out=48, k_group=16, mlp_widths=[64, 128],
                        attention_after=blocks()),
        ],
        head_widths=[64],
    )
    return TrainConfig(
        model=model,
        dataset=DatasetSpec(kind="classification", n_points=1024, noise_sigma=0.02),
        n_train=800, n_test=200,
        epochs=epochs, batch_size=16, seed=seed,
        optimizer="adam", lr=1e-3, precision="f64",
    )


def segmentation_smoke(with_attention=True, heads=1, k=16, epochs=3,
                       seed=SMOKE_SEED) -> TrainConfig:
    """Two-part composite shapes, per-point labels."""
    def blocks():
        if not with_attention:
            return []
        return [BlockConfig(variant="upa-positional", heads=heads, k=k)]

    model = ModelConfig(
        task="part-segmentation",
        n_classes=2,
        stages=[
            StageConfig(points_out=128, k_group=16, mlp_widths=[32, 64],
                        attention_after=blocks()),
            StageConfig(points_out=32, k_group=16, mlp_widths=[64, 128],
                        attention_after=blocks()),
        ],
        head_widths=[64],
        fp_widths=[[64], [64]],
    )
    return TrainConfig(
        model=model,
        dataset=DatasetSpec(kind="segmentation", n_points=512, noise_sigma=0.02),
        n_train=200, n_test=50,
        epochs=epochs, batch_size=16, seed=seed,
        optimizer="adam", lr=1e-3, precision="f64",
    )
