"""Compiled-lane vs fallback-lane agreement and the import-time switch."""

import os
import subprocess
import sys

import numpy as np
import pytest

from upa import kernels

needs_compiled = pytest.mark.skipif(not kernels.COMPILED_AVAILABLE,
                                    reason="compiled extension not built")


@needs_compiled
class TestLaneAgreement:
    def test_knn_grid_matches_brute_exactly(self):
        rng = np.random.default_rng(0)
        for trial in range(120):
            n = int(rng.integers(1, 400))
            pts = rng.uniform(-1, 1, (n, 3))
            if trial % 5 == 0:
                pts[:, 2] = 0.0  # planar: degenerate grid axis
            if trial % 7 == 0 and n > 2:
                pts[: n // 2] = pts[0]  # heavy duplication
            k = int(rng.integers(1, n + 1))
            q = rng.uniform(-1.5, 1.5, (int(rng.integers(1, 30)), 3))
            np.testing.assert_array_equal(
                kernels.knn(pts, q, k, method="grid"),
                kernels.knn(pts, q, k, method="brute"),
            )

    def test_knn_grid_single_point_cloud(self):
        pts = np.array([[0.3, -0.2, 0.9]])
        got = kernels.knn(pts, np.array([[5.0, 5.0, 5.0]]), 1, method="grid")
        np.testing.assert_array_equal(got, [[0]])

    def test_fps_lanes_identical(self):
        rng = np.random.default_rng(1)
        for _ in range(60):
            n = int(rng.integers(1, 300))
            pts = rng.uniform(-1, 1, (n, 3))
            m = int(rng.integers(1, n + 1))
            s = int(rng.integers(0, n))
            np.testing.assert_array_equal(
                kernels.fps(pts, m, s, method="compiled"),
                kernels.fps(pts, m, s, method="numpy"),
            )

    def test_attend_lanes_agree(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m, k = int(rng.integers(1, 60)), int(rng.integers(1, 12))
            h = int(rng.integers(1, 5))
            dh = int(rng.integers(1, 6))
            d = h * dh
            n = m + 5
            scores = rng.standard_normal((m, k, h)) * 3
            values = rng.standard_normal((n, d))
            idx = rng.integers(0, n, (m, k))
            a = kernels.attend(scores, values, idx, h, method="numpy")
            b = kernels.attend(scores, values, idx, h, method="compiled")
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_attend_writes_into_preallocated_output(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal((4, 3, 2))
        values = rng.standard_normal((9, 6))
        idx = rng.integers(0, 9, (4, 3))
        out = np.full((4, 6), np.nan)
        res = kernels.attend(scores, values, idx, 2, out=out, method="compiled")
        assert res is out and np.isfinite(out).all()


def test_force_fallback_env_switches_lane():
    code = (
        "import os; os.environ['UPA_FORCE_FALLBACK']='1'; "
        "from upa import kernels; print(kernels.active_lane())"
    )
    lane = subprocess.run([sys.executable, "-c", code], capture_output=True,
                          text=True, check=True).stdout.strip()
    assert lane == "fallback"


def test_fallback_lane_serves_all_kernels():
    env = dict(os.environ, UPA_FORCE_FALLBACK="1")
    code = """
import numpy as np
from upa import kernels
pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
nbr = kernels.knn(pts, pts[:5], 4)
idx = kernels.fps(pts, 10, 0)
out = kernels.attend(np.zeros((5, 4, 2)), np.ones((50, 6)), nbr, 2)
assert nbr.shape == (5, 4) and idx.shape == (10,) and out.shape == (5, 6)
print("ok")
"""
    res = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env)
    assert res.returncode == 0 and res.stdout.strip() == "ok"
