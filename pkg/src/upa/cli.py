"""Command-line entry points: train, eval, analyze, ablate, bench.

Package-specific failures print one machine-readable JSON object to
stderr and exit nonzero. The UPA_SEED environment variable overrides
the config seed for training commands.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import analysis, cloud_io
from .backbone import Model
from .errors import ConfigError, UpaError
from .harness import (
    AXES,
    BENCH_VARIANTS,
    DatasetSpec,
    TrainConfig,
    ablate,
    bench,
    evaluate_model,
    generate_dataset,
    load_model,
    train,
)
from .harness.ablate import format_table
from .harness.training import _forward


def _print(record):
    print(json.dumps(record))


def cmd_train(args):
    cfg = TrainConfig.from_json(args.config)
    model, history = train(cfg, out_dir=args.out, log=_print)
    if args.export_test_data:
        seed = int(os.environ.get("UPA_SEED", cfg.seed))
        test_set = generate_dataset(cfg.dataset, cfg.n_test, seed, offset=cfg.n_train)
        data_dir = os.path.join(args.out, "test_data")
        os.makedirs(data_dir, exist_ok=True)
        for i, pc in enumerate(test_set):
            cloud_io.save_cloud(os.path.join(data_dir, f"cloud{i:05d}.upcd"), pc)
    return 0


def _load_eval_data(path):
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.upcd")))
        if not files:
            raise ConfigError(f"no .upcd files in {path}")
        return [cloud_io.load_cloud(f) for f in files]
    with open(path) as fh:
        spec = json.load(fh)
    return generate_dataset(DatasetSpec.from_dict(spec["dataset"]),
                            spec["count"], spec.get("seed", 0),
                            offset=spec.get("offset", 0))


def cmd_eval(args):
    config_path = args.config or os.path.join(os.path.dirname(args.ckpt), "config.json")
    with open(config_path) as fh:
        cfg = TrainConfig.from_dict(json.load(fh))
    model = load_model(cfg.model, args.ckpt, dtype=cfg.dtype)
    clouds = _load_eval_data(args.data)
    metrics, predictions = evaluate_model(model, clouds, cfg.knn_method)
    if args.dump_maps:
        _dump_maps(model, clouds[: args.map_clouds], args.dump_maps, cfg.knn_method)
    out = {"metrics": metrics, "n_clouds": len(clouds)}
    if args.predictions:
        with open(args.predictions, "w") as fh:
            json.dump(predictions, fh)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
    _print(out)
    return 0


def _dump_maps(model: Model, clouds, out_dir, knn_method):
    os.makedirs(out_dir, exist_ok=True)
    for ci, pc in enumerate(clouds):
        _, maps = _forward(model, pc, capture=True, knn_method=knn_method)
        for stage_id, cap in maps or []:
            amap = analysis.AttentionMap(stage_id, cap.dense())
            name = f"cloud{ci:04d}_stage{stage_id}_{cap.label}.uamp"
            analysis.save_maps(os.path.join(out_dir, name), amap)


def cmd_analyze(args):
    if os.path.isdir(args.maps):
        files = sorted(glob.glob(os.path.join(args.maps, "*.uamp")))
    else:
        files = sorted(glob.glob(args.maps))
    if not files:
        raise ConfigError(f"no attention-map dumps match {args.maps!r}")
    report = analysis.analyze_run(files, args.out, max_queries=args.max_queries)
    print(analysis.format_report_table(report))
    return 0


def cmd_ablate(args):
    cfg = TrainConfig.from_json(args.config)
    table = ablate(args.axis, cfg, out_dir=args.out, log=_print)
    print(format_table(table))
    return 0


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    result = bench(args.variant, sizes, k=args.k, heads=args.heads,
                   repeats=args.repeats, seed=args.seed,
                   out_path=args.out, log=_print)
    print(json.dumps({"variant": result["variant"],
                      "fitted_exponent": result["fitted_exponent"]}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="upa",
                                     description="Local unary-pairwise attention experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-test-data", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True,
                   help="directory of .upcd files or a dataset-spec JSON")
    p.add_argument("--config", default=None,
                   help="training config (default: config.json beside the checkpoint)")
    p.add_argument("--out", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--dump-maps", default=None,
                   help="directory for captured attention-map dumps")
    p.add_argument("--map-clouds", type=int, default=2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="attention-map similarity report")
    p.add_argument("--maps", required=True, help="directory or glob of .uamp dumps")
    p.add_argument("--out", required=True)
    p.add_argument("--max-queries", type=int, default=256)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="sweep one design axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="forward-pass scaling measurements")
    p.add_argument("--variant", required=True, choices=sorted(BENCH_VARIANTS))
    p.add_argument("--sizes", required=True, help="comma-separated point counts, ascending")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UpaError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except OSError as exc:
        json.dump({"error": "OSError", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
