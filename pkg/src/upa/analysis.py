"""Attention-map similarity analysis.

Quantifies how strongly attention degenerates toward query-independent
behavior: the Jensen-Shannon divergence between the attention rows of
every query pair, averaged over all ordered pairs (diagonal included)
and over heads. Base-2 logarithms fix the range to [0, 1]; identical
rows score 0, disjoint supports score 1.

Map dump layout (little-endian, see docs/FORMATS.md):

    magic  b"UAMP1"
    u64    stage id
    u64    head count h
    u64    M (queries)
    u64    K (keys; K = N for dense/global maps)
    f64*   h x M x K row-major probabilities
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"UAMP1"

ROW_SUM_TOL = 1e-6
HISTOGRAM_BINS = 20


@dataclass
class AttentionMap:
    """Per-head row-stochastic query-to-key weight matrices."""

    stage: int
    probs: np.ndarray  # (heads, M, K)

    @property
    def heads(self):
        return self.probs.shape[0]

    @property
    def n_queries(self):
        return self.probs.shape[1]

    @property
    def n_keys(self):
        return self.probs.shape[2]


def _check_rows(rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.size == 0:
        raise ContractError("attention map is empty")
    if rows.min() < 0:
        raise ContractError("attention rows must be nonnegative")
    sums = rows.sum(axis=-1)
    worst = np.abs(sums - 1.0).max()
    if worst > ROW_SUM_TOL:
        raise ContractError(f"attention rows must sum to 1 within {ROW_SUM_TOL}, worst |sum-1|={worst:.3g}")
    return rows


def _plogp(rows):
    """Sum of p*log2(p) along the last axis; zero entries contribute 0."""
    out = np.zeros_like(rows)
    mask = rows > 0
    out[mask] = rows[mask] * np.log2(rows[mask])
    return out.sum(axis=-1)


def entropy(rows):
    """Shannon entropy (bits) of each probability row."""
    return -_plogp(np.asarray(rows, dtype=np.float64))


def jsd(p, q):
    """Jensen-Shannon divergence between two distributions, in [0, 1].

    Computed as the average of the two KL terms against the midpoint,
    base 2. Zero-probability terms contribute zero by continuity.
    """
    p = _check_rows(p)
    q = _check_rows(q)
    if p.shape != q.shape:
        raise ContractError(f"distributions differ in length: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)

    def kl(a):
        mask = a > 0
        return (a[mask] * np.log2(a[mask] / m[mask])).sum()

    return 0.5 * kl(p) + 0.5 * kl(q)


def _pair_jsd_block(rows, i_idx, j_idx):
    """JSD for the row pairs (i, j) via H(m) - H(p)/2 - H(q)/2."""
    p = rows[i_idx]
    q = rows[j_idx]
    return 0.5 * _plogp(p) + 0.5 * _plogp(q) - _plogp(0.5 * (p + q))


def _subsample(m, max_queries):
    if max_queries is None or m <= max_queries:
        return np.arange(m)
    stride = -(-m // max_queries)  # deterministic stride, first row kept
    return np.arange(0, m, stride)


def mjsd(amap: AttentionMap, max_queries=None):
    """Mean JSD over all ordered query pairs (diagonal included), then
    over heads: the normalization is 1 / (M^2 * heads)."""
    rows = _check_rows(amap.probs)
    used = _subsample(amap.n_queries, max_queries)
    per_head = []
    for t in range(amap.heads):
        head_rows = rows[t][used]
        mu = head_rows.shape[0]
        ii, jj = np.meshgrid(np.arange(mu), np.arange(mu), indexing="ij")
        vals = _pair_jsd_block(head_rows, ii.ravel(), jj.ravel())
        per_head.append(vals.sum() / (mu * mu))
    return float(np.mean(per_head))


def mjsd_sparse(neighbors, probs, max_queries=None):
    """mjsd for local maps kept sparse: row i is nonzero only on its
    neighbor set. Equivalent to embedding into the full key axis."""
    neighbors = np.asarray(neighbors)
    probs = np.asarray(probs, dtype=np.float64)
    heads, m, _ = probs.shape
    used = _subsample(m, max_queries)
    per_head = []
    for t in range(heads):
        total = 0.0
        for a in used:
            for b in used:
                pa = dict(zip(neighbors[a].tolist(), probs[t, a]))
                pb = dict(zip(neighbors[b].tolist(), probs[t, b]))
                keys = sorted(set(pa) | set(pb))
                pv = np.array([pa.get(key, 0.0) for key in keys])
                qv = np.array([pb.get(key, 0.0) for key in keys])
                mid = 0.5 * (pv + qv)
                total += 0.5 * _plogp(pv[None])[0] + 0.5 * _plogp(qv[None])[0] - _plogp(mid[None])[0]
        per_head.append(total / (len(used) ** 2))
    return float(np.mean(per_head))


# ---------------------------------------------------------------------------
# dump I/O


def save_maps(path, amap: AttentionMap):
    probs = np.ascontiguousarray(amap.probs, dtype="<f8")
    h, m, k = probs.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQQQ", amap.stage, h, m, k))
        fh.write(probs.tobytes())


def load_maps(path) -> AttentionMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad map-dump magic {blob[:len(MAGIC)]!r}", offset=0)
    pos = len(MAGIC)
    if pos + 32 > len(blob):
        raise FormatError("truncated map-dump header", offset=pos)
    stage, h, m, k = struct.unpack("<QQQQ", blob[pos:pos + 32])
    pos += 32
    need = 8 * h * m * k
    if pos + need > len(blob):
        raise FormatError(
            f"truncated map dump: expected {need} bytes of probabilities", offset=pos
        )
    probs = np.frombuffer(blob[pos:pos + need], dtype="<f8").reshape(h, m, k).copy()
    return AttentionMap(int(stage), probs)


# ---------------------------------------------------------------------------
# report


def analyze_maps(maps, max_queries=256):
    """Aggregate per (stage, head): mjsd, mean row entropy, and a
    histogram of unordered pair JSDs in 20 equal bins over [0, 1]."""
    groups = {}
    for amap in maps:
        rows = _check_rows(amap.probs)
        used = _subsample(amap.n_queries, max_queries)
        for t in range(amap.heads):
            head_rows = rows[t][used]
            mu = head_rows.shape[0]
            ii, jj = np.triu_indices(mu, k=1)
            pair_vals = _pair_jsd_block(head_rows, ii, jj)
            full_ii, full_jj = np.meshgrid(np.arange(mu), np.arange(mu), indexing="ij")
            head_mjsd = _pair_jsd_block(head_rows, full_ii.ravel(), full_jj.ravel()).sum() / (mu * mu)
            hist, _ = np.histogram(np.clip(pair_vals, 0.0, 1.0), bins=HISTOGRAM_BINS, range=(0.0, 1.0))
            entry = groups.setdefault(
                (amap.stage, t),
                {"stage": amap.stage, "head": t, "mjsd_sum": 0.0, "entropy_sum": 0.0,
                 "histogram": np.zeros(HISTOGRAM_BINS, dtype=np.int64), "n_maps": 0,
                 "n_queries_used": int(mu)},
            )
            entry["mjsd_sum"] += head_mjsd
            entry["entropy_sum"] += float(entropy(head_rows).mean())
            entry["histogram"] += hist
            entry["n_maps"] += 1
    entries = []
    for key in sorted(groups):
        g = groups[key]
        entries.append({
            "stage": int(g["stage"]),
            "head": int(g["head"]),
            "mjsd": g["mjsd_sum"] / g["n_maps"],
            "mean_entropy": g["entropy_sum"] / g["n_maps"],
            "jsd_histogram": g["histogram"].tolist(),
            "n_maps": g["n_maps"],
            "n_queries_used": g["n_queries_used"],
        })
    return {"max_queries": max_queries, "entries": entries}


def format_report_table(report):
    """Aligned plain-text table of the aggregated entries."""
    header = f"{'stage':>5} {'head':>4} {'mjsd':>8} {'entropy':>8} {'maps':>5}"
    lines = [header, "-" * len(header)]
    for e in report["entries"]:
        lines.append(
            f"{e['stage']:>5d} {e['head']:>4d} {e['mjsd']:>8.4f} "
            f"{e['mean_entropy']:>8.4f} {e['n_maps']:>5d}"
        )
    return "\n".join(lines)


def analyze_run(map_files, out_path, max_queries=256):
    """Read UAMP1 dumps, aggregate, and write JSON plus a text table."""
    maps = [load_maps(p) for p in map_files]
    if not maps:
        raise ContractError("no attention-map files to analyze")
    report = analyze_maps(maps, max_queries=max_queries)
    report["files"] = [str(p) for p in map_files]
    # raw values alongside the 4-decimal table: both are reported
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2)
    table = format_report_table(report)
    with open(str(out_path) + ".txt", "w") as fh:
        fh.write(table + "\n")
    return report
