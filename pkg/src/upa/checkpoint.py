"""Flat binary checkpoint I/O.

Layout (little-endian throughout, see docs/FORMATS.md):

    magic  b"UPAK1"
    repeat per parameter until EOF:
        u64   name length in bytes
        ...   UTF-8 name
        u64   rank
        u64*  dims
        f64*  row-major values
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, ShapeError

MAGIC = b"UPAK1"


def save_checkpoint(path, params: dict):
    """Write an ordered name -> Tensor mapping."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(tensor.data, dtype=np.float64)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into an ordered name -> ndarray mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:len(MAGIC)]!r}", offset=0)
    out = {}
    pos = len(MAGIC)
    total = len(blob)

    def take(n, what):
        nonlocal pos
        if pos + n > total:
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < total:
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        raw = take(8 * count, f"values of {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return out


def restore_into(params: dict, loaded: dict):
    """Copy loaded arrays into existing parameter tensors, shape-checked."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise FormatError(
            f"checkpoint/model parameter mismatch: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}"
        )
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ShapeError(
                f"checkpoint value {name!r} has shape {arr.shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data = arr.astype(tensor.data.dtype)
