"""Procedural point-cloud datasets.

Desk-scale stand-ins for benchmark datasets: four primitive surface
families for classification and a two-part composite for segmentation.
Every cloud is generated from its own (seed, index) stream, so datasets
are bit-identical across runs with the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..geometry import PointCloud, normalize_unit_ball

CLASS_FAMILIES = ("sphere", "box", "cylinder", "torus")
SEGMENTATION_FAMILY = "two-part-composite"


def sample_sphere(rng, n, radius=1.0, center=(0.0, 0.0, 0.0)):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(center)


def sample_box(rng, n, half=0.8, center=(0.0, 0.0, 0.0)):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, half, -half)
    for a in range(3):
        mask = axis == a
        others = [d for d in range(3) if d != a]
        pts[mask, a] = sign[mask]
        pts[mask, others[0]] = uv[mask, 0]
        pts[mask, others[1]] = uv[mask, 1]
    return pts + np.asarray(center)


def sample_cylinder(rng, n, radius=0.5, half_height=1.0):
    lateral_area = 2 * np.pi * radius * 2 * half_height
    cap_area = 2 * np.pi * radius ** 2
    p_lateral = lateral_area / (lateral_area + cap_area)
    on_side = rng.uniform(size=n) < p_lateral
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    pts[on_side, 0] = radius * np.cos(theta[on_side])
    pts[on_side, 1] = radius * np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-half_height, half_height, size=int(on_side.sum()))
    caps = ~on_side
    r = radius * np.sqrt(rng.uniform(size=int(caps.sum())))
    pts[caps, 0] = r * np.cos(theta[caps])
    pts[caps, 1] = r * np.sin(theta[caps])
    pts[caps, 2] = np.where(rng.uniform(size=int(caps.sum())) < 0.5, half_height, -half_height)
    return pts


def sample_torus(rng, n, ring=0.7, tube=0.25):
    u = rng.uniform(0, 2 * np.pi, size=n)
    # rejection keeps the surface density uniform in the tube angle
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0, 2 * np.pi, size=n - filled)
        accept = rng.uniform(size=cand.size) < (ring + tube * np.cos(cand)) / (ring + tube)
        kept = cand[accept]
        v[filled:filled + kept.size] = kept
        filled += kept.size
    x = (ring + tube * np.cos(v)) * np.cos(u)
    y = (ring + tube * np.cos(v)) * np.sin(u)
    z = tube * np.sin(v)
    return np.stack([x, y, z], axis=1)


_SAMPLERS = {
    "sphere": sample_sphere,
    "box": sample_box,
    "cylinder": sample_cylinder,
    "torus": sample_torus,
}


def sample_composite(rng, n):
    """Sphere-on-box composite; returns (points, per-point part labels)."""
    n_sphere = n // 2
    pts = np.concatenate([
        sample_sphere(rng, n_sphere, radius=0.5, center=(0.0, 0.0, 0.55)),
        sample_box(rng, n - n_sphere, half=0.45, center=(0.0, 0.0, -0.5)),
    ])
    labels = np.concatenate([
        np.zeros(n_sphere, dtype=np.int64),
        np.ones(n - n_sphere, dtype=np.int64),
    ])
    return pts, labels


@dataclass
class DatasetSpec:
    kind: str = "classification"   # or "segmentation"
    n_points: int = 256
    noise_sigma: float = 0.02
    families: tuple = field(default_factory=lambda: CLASS_FAMILIES)

    def __post_init__(self):
        self.families = tuple(self.families)
        if self.kind not in ("classification", "segmentation"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        unknown = set(self.families) - set(CLASS_FAMILIES)
        if self.kind == "classification" and unknown:
            raise ConfigError(f"unknown shape families {sorted(unknown)}")

    @property
    def n_classes(self):
        return len(self.families) if self.kind == "classification" else 2

    def to_dict(self):
        return {"kind": self.kind, "n_points": self.n_points,
                "noise_sigma": self.noise_sigma, "families": list(self.families)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "classification"),
                   n_points=d.get("n_points", 256),
                   noise_sigma=d.get("noise_sigma", 0.02),
                   families=tuple(d.get("families", CLASS_FAMILIES)))


def make_cloud(spec: DatasetSpec, index, seed) -> PointCloud:
    """One deterministic cloud; (seed, index) fixes every sample bit."""
    rng = np.random.default_rng([seed, index])
    if spec.kind == "classification":
        family = spec.families[index % len(spec.families)]
        pts = _SAMPLERS[family](rng, spec.n_points)
        labels = None
        cloud_label = spec.families.index(family)
    else:
        pts, labels = sample_composite(rng, spec.n_points)
        cloud_label = None
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(0.0, spec.noise_sigma, size=pts.shape)
    return normalize_unit_ball(PointCloud(pts, point_labels=labels, cloud_label=cloud_label))


def generate_dataset(spec: DatasetSpec, count, seed, offset=0):
    """``count`` clouds drawn from disjoint per-index streams."""
    if count < 1:
        raise ConfigError(f"dataset size must be positive, got {count}")
    return [make_cloud(spec, offset + i, seed) for i in range(count)]
