"""Point-cloud file I/O.

Binary layout (little-endian, see docs/FORMATS.md):

    magic  b"UPCD1"
    u64    N
    u64    d           (0 when no features)
    u8     flags       bit0 features, bit1 point labels, bit2 cloud label
    f64*   positions   N x 3 row-major
    f64*   features    N x d row-major      (if bit0)
    i64*   point labels, N entries          (if bit1)
    i64    cloud label                      (if bit2)

A plain-text importer accepts "x y z" or "x y z label" lines.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

MAGIC = b"UPCD1"

_FLAG_FEATURES = 1
_FLAG_POINT_LABELS = 2
_FLAG_CLOUD_LABEL = 4


def save_cloud(path, pc: PointCloud):
    n = pc.n_points
    d = 0 if pc.features is None else pc.features.shape[1]
    flags = 0
    if pc.features is not None:
        flags |= _FLAG_FEATURES
    if pc.point_labels is not None:
        flags |= _FLAG_POINT_LABELS
    if pc.cloud_label is not None:
        flags |= _FLAG_CLOUD_LABEL
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQB", n, d, flags))
        fh.write(np.ascontiguousarray(pc.positions, dtype="<f8").tobytes())
        if pc.features is not None:
            fh.write(np.ascontiguousarray(pc.features, dtype="<f8").tobytes())
        if pc.point_labels is not None:
            fh.write(np.ascontiguousarray(pc.point_labels, dtype="<i8").tobytes())
        if pc.cloud_label is not None:
            fh.write(struct.pack("<q", pc.cloud_label))


def load_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad point-cloud magic {blob[:len(MAGIC)]!r}", offset=0)
    pos = len(MAGIC)

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated point-cloud file while reading {what}", offset=pos)
        chunk = blob[pos:pos + nbytes]
        pos += nbytes
        return chunk

    n, d, flags = struct.unpack("<QQB", take(17, "header"))
    positions = np.frombuffer(take(24 * n, "positions"), dtype="<f8").reshape(n, 3).copy()
    features = None
    if flags & _FLAG_FEATURES:
        features = np.frombuffer(take(8 * n * d, "features"), dtype="<f8").reshape(n, d).copy()
    point_labels = None
    if flags & _FLAG_POINT_LABELS:
        point_labels = np.frombuffer(take(8 * n, "point labels"), dtype="<i8").copy()
    cloud_label = None
    if flags & _FLAG_CLOUD_LABEL:
        (cloud_label,) = struct.unpack("<q", take(8, "cloud label"))
    return PointCloud(positions, features, point_labels, cloud_label)


def load_xyz(path) -> PointCloud:
    """Import whitespace-separated "x y z" or "x y z label" text."""
    positions = []
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (3, 4):
                raise FormatError(f"line {lineno}: expected 3 or 4 columns, got {len(parts)}")
            try:
                positions.append([float(v) for v in parts[:3]])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from exc
            if len(parts) == 4:
                labels.append(int(parts[3]))
    if labels and len(labels) != len(positions):
        raise FormatError("label column present on some lines but not all")
    return PointCloud(
        np.asarray(positions, dtype=np.float64),
        point_labels=np.asarray(labels, dtype=np.int64) if labels else None,
    )
