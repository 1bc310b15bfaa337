#!/usr/bin/env python3
"""Regenerate the committed attention-free baseline for the smoke test.

Trains the classification smoke protocol without attention blocks and
freezes its metric history into tests/data/baseline_classification.json.
The acceptance suite compares the attention-equipped run against this
file, mirroring a fixed-backbone comparison under one seed.
"""

import json
import pathlib
import sys
import time

from upa.harness import train
from upa.harness.presets import classification_smoke


def main():
    cfg = classification_smoke(with_attention=False)
    t0 = time.perf_counter()
    _, history = train(cfg, log=lambda r: print(json.dumps(r)))
    elapsed = time.perf_counter() - t0
    out = {
        "config": cfg.to_dict(),
        "history": history,
        "final_oa": history[-1]["test_oa"],
        "best_oa": max(h["test_oa"] for h in history),
        "wall_seconds": round(elapsed, 1),
    }
    target = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data" \
        / "baseline_classification.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(out, indent=2) + "\n")
    print(f"baseline final OA {out['final_oa']:.4f} -> {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
