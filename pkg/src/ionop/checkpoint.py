"""Model checkpoints: a JSON metadata document plus a binary weight blob.

Blob layout (little-endian): magic ``FNOW1\\0`` then one record per weight:
name length u32, UTF-8 name, rank u32, extents u64[rank], dtype tag u8
(0 = float64, 1 = complex128), raw float64 payload (complex interleaved
re/im). Weight order is the parameter creation order, so saves are
deterministic.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .fno import Fno, FnoConfig, FnoParams

MAGIC = b"FNOW1\x00"

_TAG_F64 = 0
_TAG_C128 = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def _paths(path) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".json", ".fnow"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".fnow")


def save(path, model: Fno, normalization: Optional[dict] = None, provenance: Optional[dict] = None) -> Path:
    """Write `<base>.json` and `<base>.fnow`; returns the JSON path."""
    meta_path, blob_path = _paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    with open(blob_path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in model.params.arrays.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            if np.iscomplexobj(arr):
                fh.write(struct.pack("<B", _TAG_C128))
                fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
            else:
                fh.write(struct.pack("<B", _TAG_F64))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = {
        "format": "ionop-checkpoint",
        "version": 1,
        "config": model.config.to_dict(),
        "depth": model.params.depth,
        "variant": model.params.variant,
        "normalization": normalization,
        "provenance": provenance or {},
        "weights_file": blob_path.name,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta_path


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError("truncated weight blob")
    return data


def load(path) -> Tuple[Fno, Optional[dict], dict]:
    """Read a checkpoint; returns (model, normalization stats, provenance)."""
    meta_path, blob_path = _paths(path)
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint metadata {meta_path}: {exc}") from exc
    config = FnoConfig.from_dict(meta["config"])
    arrays = {}
    with open(blob_path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{blob_path}: bad magic, not a weight blob")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
            (tag,) = struct.unpack("<B", _read_exact(fh, 1))
            size = int(np.prod(shape)) if shape else 1
            if tag == _TAG_C128:
                arr = np.frombuffer(_read_exact(fh, 16 * size), dtype="<c16").reshape(shape)
            elif tag == _TAG_F64:
                arr = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8").reshape(shape)
            else:
                raise CheckpointError(f"{blob_path}: unknown dtype tag {tag}")
            arrays[name] = arr.copy()
    params = FnoParams(arrays, depth=meta["depth"], variant=meta["variant"])
    return Fno(config, params), meta.get("normalization"), meta.get("provenance", {})
