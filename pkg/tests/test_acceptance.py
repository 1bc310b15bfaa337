"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete. Tolerances and budgets are fixed here and must
not be loosened.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

import upa.autodiff as ad
from upa.analysis import AttentionMap, analyze_maps, analyze_run, format_report_table, save_maps
from upa.attention import BlockParams, SaParams, attention_block, self_attention_global, \
    self_attention_local, upa_attend
from upa.autodiff import Tape, Tensor
from upa.backbone import Model, forward_classification
from upa.cli import main as cli_main
from upa.geometry import farthest_point_sample, knn
from upa.gradcheck import gradcheck
from upa.harness import ablate, bench, train
from upa.harness.presets import classification_smoke
from upa.nn import collect_parameters

from tests.test_harness import tiny_train_config

DATA = Path(__file__).resolve().parent / "data"

BLOCK_VARIANTS = ("global-sa", "local-sa", "upa-plain", "upa-positional", "upa-gated")
UPA_FAMILY = ("upa-plain", "upa-positional", "upa-gated")


def _report(criterion, text):
    print(f"[criterion {criterion:>2}] PASS  {text}")


def _randomized_block(rng, variant, d_raw=8, heads=2):
    params = BlockParams.create(np.random.default_rng(0), d_raw, variant, heads=heads)
    tensors = list(collect_parameters(params.named_parameters()).values())
    for t in tensors:
        t.data = rng.uniform(-1.0, 1.0, t.data.shape)
    return params, tensors


def _scalarize(t, rng):
    w = Tensor(rng.uniform(-1, 1, t.data.shape))
    return ad.mean_reduce(ad.reshape(ad.mul(t, w), (t.data.size,)), axis=0)


def test_criterion_1_gradcheck_suite():
    """Every op and block variant: max rel err < 1e-4, seeds 0-9, < 2 min."""
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)

        # primitive ops
        a = Tensor(rng.uniform(-1, 1, (3, 4)))
        b = Tensor(rng.uniform(-1, 1, (4, 2)))
        g3 = Tensor(rng.uniform(-1, 1, (2, 3, 4)))
        v = Tensor(rng.uniform(-1, 1, 2))
        same = Tensor(rng.uniform(-1, 1, (3, 4)))
        srow = Tensor(rng.uniform(-1, 1, (3, 1)))
        wlast = Tensor(rng.uniform(-1, 1, (3,)))
        xg = Tensor(rng.uniform(-1, 1, (3, 2, 4)))
        xq = Tensor(rng.uniform(-1, 1, (3, 4)))
        logits = Tensor(rng.uniform(-1, 1, (3, 5)))
        relu_in = rng.uniform(-1, 1, (3, 4))
        relu_in[np.abs(relu_in) < 1e-4] = 0.1  # keep off the kink
        relu_t = Tensor(relu_in)
        idx = rng.integers(0, 3, (2, 2))
        checks = [
            (lambda: _scalarize(ad.matmul(a, b), rng), [a, b]),
            (lambda: _scalarize(ad.matmul(g3, b), rng), [g3, b]),
            (lambda: _scalarize(ad.add(a, same), rng), [a, same]),
            (lambda: _scalarize(ad.sub(a, same), rng), [a, same]),
            (lambda: _scalarize(ad.mul(a, same), rng), [a, same]),
            (lambda: _scalarize(ad.mul_scalar(a, -1.7), rng), [a]),
            (lambda: _scalarize(ad.add_rowvec(ad.matmul(a, b), v), rng), [a, b, v]),
            (lambda: _scalarize(ad.relu(relu_t), rng), [relu_t]),
            (lambda: _scalarize(ad.sigmoid(a), rng), [a]),
            (lambda: _scalarize(ad.softmax_lastdim(a), rng), [a]),
            (lambda: _scalarize(ad.concat_lastdim([a, same]), rng), [a, same]),
            (lambda: _scalarize(ad.slice_lastdim(a, 1, 3), rng), [a]),
            (lambda: _scalarize(ad.transpose2d(a), rng), [a]),
            (lambda: _scalarize(ad.reshape(a, (4, 3)), rng), [a]),
            (lambda: _scalarize(ad.mean_reduce(a, axis=0), rng), [a]),
            (lambda: _scalarize(ad.sum_reduce(a, axis=1), rng), [a]),
            (lambda: _scalarize(ad.max_reduce(a, axis=1), rng), [a]),
            (lambda: _scalarize(ad.gather_rows(a, idx), rng), [a]),
            (lambda: _scalarize(ad.scale_rows(a, srow), rng), [a, srow]),
            (lambda: _scalarize(ad.mul_bcast_last(a, wlast), rng), [a, wlast]),
            (lambda: _scalarize(ad.sub_bcast_mid(xg, xq), rng), [xg, xq]),
            (lambda: ad.cross_entropy(logits, rng.integers(0, 5, 3)), [logits]),
            (lambda: _scalarize(upa_attend(Tensor(rng.uniform(-1, 1, (3, 2, 2))),
                                           xg, 2), rng), [xg]),
        ]
        for fn, wrt in checks:
            worst = max(worst, gradcheck(fn, wrt))

        # composed blocks
        n, d_raw, k = 10, 8, 4
        pos = rng.uniform(-1, 1, (n, 3))
        x = rng.uniform(-1, 1, (n, d_raw))
        nbr = knn(pos, np.arange(n), k)
        for variant in BLOCK_VARIANTS:
            params, tensors = _randomized_block(rng, variant)
            xt = Tensor(x.copy(), requires_grad=True)
            tgt = Tensor(rng.uniform(-1, 1, (n, d_raw)))

            def block_loss():
                out = attention_block(xt, pos, None if variant == "global-sa" else nbr,
                                      params)
                diff = ad.sub(out.features, tgt)
                return ad.mean_reduce(ad.reshape(ad.mul(diff, diff),
                                                 (n * d_raw,)), axis=0)

            worst = max(worst, gradcheck(block_loss, tensors + [xt]))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst gradcheck rel err {worst:.3e}"
    assert elapsed < 120, f"gradcheck suite took {elapsed:.1f}s"
    _report(1, f"gradcheck worst rel err {worst:.2e} over seeds 0-9 in {elapsed:.1f}s")


def test_criterion_2_local_sa_degenerates_to_global():
    """local-SA with k=N matches global SA within 1e-9 on 50 clouds."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 65))
        d = int(rng.choice([4, 6, 8]))
        heads = int(rng.choice([1, 2]))
        p = SaParams.create(np.random.default_rng(1), d, d, heads=heads)
        for _, t in p.named_parameters():
            t.data = rng.uniform(-1, 1, t.data.shape)
        pos = rng.uniform(-1, 1, (n, 3))
        x = Tensor(rng.uniform(-1, 1, (n, d)))
        nbr = knn(pos, np.arange(n), n)
        local = self_attention_local(x, nbr, p).features.data
        global_ = self_attention_global(x, p).features.data
        worst = max(worst, np.abs(local - global_).max())
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9, f"worst deviation {worst:.3e}"
    assert elapsed < 10, f"took {elapsed:.1f}s"
    _report(2, f"k=N local vs global SA worst |diff| {worst:.2e} in {elapsed:.1f}s")


def test_criterion_3_locality_is_bitwise():
    """Perturbing any non-neighbor leaves a query's output bit-identical."""
    rng = np.random.default_rng(3)
    trials = 0
    while trials < 100:
        variant = UPA_FAMILY[trials % 3]
        n, k = 20, 4
        pos = rng.uniform(-1, 1, (n, 3))
        x = rng.uniform(-1, 1, (n, 8))
        nbr = knn(pos, np.arange(n), k)
        params, _ = _randomized_block(rng, variant)
        base = attention_block(Tensor(x), pos, nbr, params).features.data
        query = int(rng.integers(0, n))
        inside = set(nbr.neighbors[query].tolist()) | {query}
        outside = [j for j in range(n) if j not in inside]
        victim = int(rng.choice(outside))
        x2 = x.copy()
        x2[victim] += rng.uniform(0.5, 2.0, 8)
        after = attention_block(Tensor(x2), pos, nbr, params).features.data
        assert np.array_equal(base[query], after[query]), \
            f"{variant}: non-neighbor {victim} leaked into query {query}"
        trials += 1
    _report(3, "100 non-neighbor perturbations changed outputs by exactly 0 bits")


def test_criterion_4_permutation_behavior():
    """Per-point equivariance and pooled-logit invariance, 100 permutations."""
    rng = np.random.default_rng(4)
    # block-level equivariance, 50 permutations across variants
    for trial in range(50):
        variant = BLOCK_VARIANTS[trial % len(BLOCK_VARIANTS)]
        n = 16
        pos = rng.uniform(-1, 1, (n, 3))
        x = rng.uniform(-1, 1, (n, 8))
        nbr = knn(pos, np.arange(n), 4)
        params, _ = _randomized_block(rng, variant)
        base = attention_block(Tensor(x), pos,
                               None if variant == "global-sa" else nbr,
                               params).features.data
        perm = rng.permutation(n)
        nbr_p = None if variant == "global-sa" else knn(pos[perm], np.arange(n), 4)
        out = attention_block(Tensor(x[perm]), pos[perm], nbr_p, params).features.data
        np.testing.assert_allclose(out, base[perm], atol=1e-6)

    # pooled classification logits, 50 permutations
    cfg = tiny_train_config()
    model = Model(cfg.model, np.random.default_rng(0))
    from upa.geometry import PointCloud
    pts = rng.uniform(-1, 1, (96, 3))
    base, _ = forward_classification(PointCloud(pts, cloud_label=0), model)
    for _ in range(50):
        perm = rng.permutation(96)
        out, _ = forward_classification(PointCloud(pts[perm], cloud_label=0), model)
        np.testing.assert_allclose(out.data, base.data, atol=1e-6)
    _report(4, "100 permutations: equivariant per-point outputs, invariant logits (1e-6)")


def test_criterion_5_analysis_oracles():
    """Hand-enumerated JSD/mJSD values hold exactly."""
    from upa.analysis import jsd, mjsd
    assert jsd([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert mjsd(AttentionMap(0, np.array([[[1.0, 0.0], [0.0, 1.0]]]))) == 0.5
    rng = np.random.default_rng(5)
    row = rng.uniform(0.1, 1.0, 6)
    row /= row.sum()
    identical = np.tile(row, (4, 1))
    assert mjsd(AttentionMap(0, identical[None])) == 0.0
    for n in (2, 4, 7, 16):
        got = mjsd(AttentionMap(0, np.eye(n)[None]))
        assert abs(got - (n - 1) / n) <= 1e-12
    _report(5, "jsd/mjsd match hand enumeration (1.0, 0.5, 0.0, (N-1)/N)")


def test_criterion_6_multihead_decomposition():
    """h=4 attention equals 4 concatenated single-head slice runs (1e-9)."""
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        m, k, h, dh = 9, 5, 4, 3
        d = h * dh
        scores = Tensor(rng.uniform(-3, 3, (m, k, h)))
        values = Tensor(rng.uniform(-1, 1, (m, k, d)))
        full = upa_attend(scores, values, h).data
        parts = []
        for t in range(h):
            s = Tensor(scores.data[:, :, t:t + 1].copy())
            v = Tensor(values.data[:, :, t * dh:(t + 1) * dh].copy())
            parts.append(upa_attend(s, v, 1).data)
        worst = max(worst, np.abs(full - np.concatenate(parts, axis=1)).max())
    assert worst < 1e-9
    _report(6, f"4-head vs 4 single-head slice runs: worst |diff| {worst:.2e}")


def test_criterion_7_spatial_oracles_on_1000_clouds():
    """kNN and FPS match independent brute-force oracles exactly."""
    rng = np.random.default_rng(7)
    for trial in range(1000):
        n = int(rng.integers(1, 513))
        pts = rng.uniform(-1, 1, (n, 3))
        if trial % 11 == 0 and n > 3:
            pts[: n // 4] = pts[rng.integers(0, n, n // 4)]  # exact ties
        k = int(rng.integers(1, min(n, 24) + 1))
        m = int(rng.integers(1, 17))
        q_idx = rng.integers(0, n, m)
        got = knn(pts, q_idx, k).neighbors
        d2 = ((pts[q_idx][:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        oracle = np.argsort(d2, axis=1, kind="stable")[:, :k]
        np.testing.assert_array_equal(got, oracle)

        m_fps = int(rng.integers(1, min(n, 48) + 1))
        start = int(rng.integers(0, n))
        got_fps = farthest_point_sample(pts, m_fps, start)
        chosen = [start]
        mind2 = ((pts - pts[start]) ** 2).sum(axis=1)
        for _ in range(m_fps - 1):
            nxt = int(np.argmax(mind2))
            chosen.append(nxt)
            mind2 = np.minimum(mind2, ((pts - pts[nxt]) ** 2).sum(axis=1))
        np.testing.assert_array_equal(got_fps, np.array(chosen))
    _report(7, "kNN and FPS equal brute-force oracles on 1000 clouds (exact)")


def test_criterion_8_scaling_bench():
    """Fitted growth exponents: local UPA <= 1.4, global SA >= 1.7."""
    t0 = time.perf_counter()
    local = bench("local-upa", [1024, 2048, 4096, 8192], k=16, heads=4, repeats=5)
    global_ = bench("global-sa", [512, 1024, 2048, 4096], k=16, heads=4, repeats=5)
    elapsed = time.perf_counter() - t0
    assert local["fitted_exponent"] <= 1.4, local["fitted_exponent"]
    assert global_["fitted_exponent"] >= 1.7, global_["fitted_exponent"]
    assert elapsed < 300, f"bench took {elapsed:.1f}s"
    _report(8, f"exponents: local-upa {local['fitted_exponent']:.2f} <= 1.4, "
               f"global-sa {global_['fitted_exponent']:.2f} >= 1.7 ({elapsed:.0f}s)")


def test_criterion_9_training_smoke_vs_committed_baseline():
    """UPA run reaches >= 90% OA within 30 epochs and stays within 1 point
    of the committed attention-free baseline's final OA."""
    baseline_path = DATA / "baseline_classification.json"
    assert baseline_path.exists(), \
        "missing committed baseline; run scripts/make_baseline.py"
    baseline = json.loads(baseline_path.read_text())
    cfg = classification_smoke(with_attention=True)
    assert cfg.epochs <= 30
    t0 = time.perf_counter()
    _, history = train(cfg)
    elapsed = time.perf_counter() - t0
    best = max(h["test_oa"] for h in history)
    final = history[-1]["test_oa"]
    assert elapsed <= 600, f"training took {elapsed:.0f}s > 10 min"
    assert best >= 0.90, f"best OA {best:.4f} < 0.90"
    assert final >= baseline["final_oa"] - 0.01, \
        f"final OA {final:.4f} more than 1 point below baseline {baseline['final_oa']:.4f}"
    _report(9, f"UPA best OA {best:.4f} (final {final:.4f}) vs baseline "
               f"{baseline['final_oa']:.4f} in {elapsed:.0f}s/{cfg.epochs} epochs")


def test_criterion_10_degeneration_probe(tmp_path):
    """Dumped maps give finite mJSD; a query-independent layer reads 0.0000."""
    cfg = tiny_train_config(epochs=1)
    run_dir = tmp_path / "run"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg.to_dict()))
    assert cli_main(["train", "--config", str(cfg_path), "--out", str(run_dir),
                     "--export-test-data"]) == 0
    maps_dir = tmp_path / "maps"
    assert cli_main(["eval", "--ckpt", str(run_dir / "checkpoint.upak"),
                     "--data", str(run_dir / "test_data"),
                     "--dump-maps", str(maps_dir), "--map-clouds", "2"]) == 0
    report_path = tmp_path / "report.json"
    assert cli_main(["analyze", "--maps", str(maps_dir),
                     "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["entries"]
    for entry in report["entries"]:
        assert np.isfinite(entry["mjsd"]) and 0.0 <= entry["mjsd"] <= 1.0

    # constructed query-independent layer: every query row identical
    rng = np.random.default_rng(10)
    row = rng.uniform(0.05, 1.0, 24)
    row /= row.sum()
    degenerate = AttentionMap(9, np.tile(row, (2, 12, 1)))
    degenerate_report = analyze_maps([degenerate])
    table = format_report_table(degenerate_report)
    assert degenerate_report["entries"][0]["mjsd"] == 0.0
    assert degenerate_report["entries"][1]["mjsd"] == 0.0
    assert "0.0000" in table
    _report(10, "trained maps give finite mJSD; identical-row layer prints 0.0000")


def test_criterion_11_ablation_harness(tmp_path):
    """All five axes produce complete tables under one shared seed."""
    base = tiny_train_config(epochs=1, n_train=8, n_test=8, seed=13)
    base.dataset.n_points = 48
    expected_rows = {"k": 4, "pooling": 3, "stage": 3, "arrangement": 3, "variant": 5}
    for axis, n_rows in expected_rows.items():
        table = ablate(axis, base, out_dir=str(tmp_path))
        assert table["seed"] == 13
        assert len(table["rows"]) == n_rows, f"{axis}: {table['rows']}"
        for row in table["rows"]:
            assert row["final_oa"] is not None and np.isfinite(row["final_oa"])
        assert (tmp_path / f"ablation_{axis}.json").exists()
    _report(11, "ablation tables complete for k/pooling/stage/arrangement/variant")
