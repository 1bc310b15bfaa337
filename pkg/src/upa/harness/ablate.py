"""Ablation sweeps: one axis varied, everything else (and the seed) shared."""

from __future__ import annotations

import copy
import json
import os

from ..backbone import BlockConfig
from ..errors import ConfigError
from .training import TrainConfig, train

AXES = ("k", "pooling", "stage", "arrangement", "variant")

K_VALUES = (8, 16, 24, 32)
POOLING_VALUES = ("mean", "max", "attention")
ARRANGEMENT_VALUES = ("unary-pairwise", "pairwise-unary", "parallel")
VARIANT_VALUES = ("global-sa", "local-sa", "upa-plain", "upa-positional", "upa-gated")


def _template_block(cfg: TrainConfig) -> BlockConfig:
    """The first configured block acts as the template for sweeps."""
    for stage in cfg.model.stages:
        if stage.attention_after:
            return copy.deepcopy(stage.attention_after[0])
    return BlockConfig()


def _clear_blocks(cfg: TrainConfig):
    for stage in cfg.model.stages:
        stage.attention_after = []


def _apply(cfg: TrainConfig, axis, value) -> TrainConfig:
    cfg = copy.deepcopy(cfg)
    template = _template_block(cfg)
    if axis == "k":
        for stage in cfg.model.stages:
            for block in stage.attention_after:
                block.k = int(value)
    elif axis == "pooling":
        variant = {"mean": "mean-pool", "max": "max-pool", "attention": "upa-plain"}[value]
        for stage in cfg.model.stages:
            for block in stage.attention_after:
                block.variant = variant
    elif axis == "stage":
        _clear_blocks(cfg)
        if value == "all":
            for stage in cfg.model.stages:
                stage.attention_after = [copy.deepcopy(template)]
        else:
            cfg.model.stages[int(value) - 1].attention_after = [copy.deepcopy(template)]
    elif axis == "arrangement":
        blocks = {
            "parallel": [("upa-plain", ("unary", "pairwise"))],
            "unary-pairwise": [("upa-plain", ("unary",)), ("upa-plain", ("pairwise",))],
            "pairwise-unary": [("upa-plain", ("pairwise",)), ("upa-plain", ("unary",))],
        }[value]
        for stage in cfg.model.stages:
            if stage.attention_after:
                stage.attention_after = [
                    BlockConfig(variant=v, heads=template.heads, k=template.k,
                                components=comps)
                    for v, comps in blocks
                ]
    elif axis == "variant":
        for stage in cfg.model.stages:
            for block in stage.attention_after:
                block.variant = value
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    return cfg


def axis_values(axis, cfg: TrainConfig):
    if axis == "k":
        return list(K_VALUES)
    if axis == "pooling":
        return list(POOLING_VALUES)
    if axis == "stage":
        return list(range(1, len(cfg.model.stages) + 1)) + ["all"]
    if axis == "arrangement":
        return list(ARRANGEMENT_VALUES)
    if axis == "variant":
        return list(VARIANT_VALUES)
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {AXES}")


def ablate(axis, base_cfg: TrainConfig, out_dir=None, log=None):
    """Train once per axis value under the shared seed; returns the table."""
    rows = []
    for value in axis_values(axis, base_cfg):
        cfg = _apply(base_cfg, axis, value)
        _, history = train(cfg)
        final = history[-1]
        row = {"axis": axis, "value": value,
               "final_oa": final.get("test_oa"),
               "final_class_miou": final.get("test_class_miou"),
               "final_instance_miou": final.get("test_instance_miou"),
               "epochs_run": len(history)}
        rows.append(row)
        if log:
            log(row)
    table = {"axis": axis, "seed": base_cfg.seed, "rows": rows}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"ablation_{axis}.json"), "w") as fh:
            json.dump(table, fh, indent=2)
        with open(os.path.join(out_dir, f"ablation_{axis}.txt"), "w") as fh:
            fh.write(format_table(table) + "\n")
    return table


def format_table(table):
    lines = [f"axis: {table['axis']} (seed {table['seed']})",
             f"{'value':>16} {'OA':>8} {'class mIoU':>11} {'inst mIoU':>10}"]
    for row in table["rows"]:
        oa = "-" if row["final_oa"] is None else f"{row['final_oa']:.4f}"
        cm = "-" if row["final_class_miou"] is None else f"{row['final_class_miou']:.4f}"
        im = "-" if row["final_instance_miou"] is None else f"{row['final_instance_miou']:.4f}"
        lines.append(f"{str(row['value']):>16} {oa:>8} {cm:>11} {im:>10}")
    return "\n".join(lines)
