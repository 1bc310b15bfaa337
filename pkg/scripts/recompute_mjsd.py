#!/usr/bin/env python3
"""Recompute per-stage/head mJSD from UAMP1 dumps with SciPy.

An independent check of `upa analyze`: parses the dump format directly
and uses scipy.spatial.distance.jensenshannon (squared, base 2) instead
of the package's analysis code.

Usage: recompute_mjsd.py report.json dump1.uamp [dump2.uamp ...]
"""

import json
import struct
import sys

import numpy as np
from scipy.spatial.distance import jensenshannon


def read_dump(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    assert blob[:5] == b"UAMP1", f"{path}: bad magic"
    stage, h, m, k = struct.unpack("<QQQQ", blob[5:37])
    probs = np.frombuffer(blob[37:37 + 8 * h * m * k], dtype="<f8").reshape(h, m, k)
    return int(stage), probs


def subsample(m, cap):
    if cap is None or m <= cap:
        return list(range(m))
    stride = -(-m // cap)
    return list(range(0, m, stride))


def mjsd_scipy(rows):
    m = rows.shape[0]
    total = 0.0
    for i in range(m):
        for j in range(m):
            d = jensenshannon(rows[i], rows[j], base=2)
            if np.isnan(d):  # identical rows yield 0/0 inside scipy
                d = 0.0
            total += d * d  # scipy returns the distance = sqrt(divergence)
    return total / (m * m)


def main(argv):
    with open(argv[1]) as fh:
        report = json.load(fh)
    cap = report.get("max_queries")
    sums = {}
    counts = {}
    for path in argv[2:]:
        stage, probs = read_dump(path)
        for head in range(probs.shape[0]):
            rows = probs[head][subsample(probs.shape[1], cap)]
            key = (stage, head)
            sums[key] = sums.get(key, 0.0) + mjsd_scipy(rows)
            counts[key] = counts.get(key, 0) + 1
    ok = True
    for entry in report["entries"]:
        key = (entry["stage"], entry["head"])
        mine = sums[key] / counts[key]
        diff = abs(mine - entry["mjsd"])
        status = "OK" if diff < 1e-9 else "MISMATCH"
        if diff >= 1e-9:
            ok = False
        print(f"stage {key[0]} head {key[1]}: report {entry['mjsd']:.12f} "
              f"recomputed {mine:.12f} [{status}]")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
