"""Stimulus sampling plans, trajectory generation, and the on-disk dataset format.

Sampling plans follow the published subset tables for each model; a scale
factor shrinks every subset count (ceiling rounding) for desk-size runs.
Datasets are stored as a little-endian binary payload plus a JSON sidecar
that mirrors the header; the stimulus channel is recomputed from
(amplitude, duration) at load time instead of being stored.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .ionic import MODELS, StimulusProtocol, simulate

MAGIC = b"IONDS1\x00"
VERSION = 1

_MODEL_IDS = {"fhn": 0, "hh": 1, "ord": 2}
_MODEL_NAMES = {v: k for k, v in _MODEL_IDS.items()}

# Final simulation time and state dimension for the plan-only ORd entry.
_ORD_T_FINAL = 500.0
_ORD_N_DIM = 41


class PlanError(ValueError):
    """Unknown model or malformed sampling plan."""


class GenerationError(RuntimeError):
    """Trajectory generation failed; carries the offending protocol index."""

    def __init__(self, message: str, index: int = -1):
        super().__init__(message)
        self.index = index


class FormatError(ValueError):
    """Corrupt, truncated, or inconsistent dataset file."""


@dataclass(frozen=True)
class Subset:
    name: str
    i_range: Optional[Tuple[float, float]]  # None: amplitude irrelevant (pinned to 0)
    t_range: Tuple[float, float]
    count: int


@dataclass(frozen=True)
class SamplingPlan:
    model: str
    split: str
    subsets: Tuple[Subset, ...]

    @property
    def total(self) -> int:
        return sum(s.count for s in self.subsets)


_TRAIN_TABLES: Dict[str, List[Subset]] = {
    "fhn": [
        Subset("t0", None, (0.0, 0.0), 20),
        Subset("General", (0.1, 2.0), (0.01, 100.0), 2480),
        Subset("nap", (1e-4, 0.01), (0.01, 100.0), 500),
    ],
    "hh": [
        Subset("t0", None, (0.0, 0.0), 20),
        Subset("General", (2.0, 10.0), (0.01, 100.0), 2380),
        Subset("nap", (1e-4, 2.0), (0.01, 100.0), 100),
        Subset("i_high", (50.0, 200.0), (0.01, 100.0), 300),
        Subset("t_fin", (2.0, 30.0), (100.0, 100.0), 200),
    ],
    "ord": [
        Subset("t0", None, (0.0, 0.0), 50),
        Subset("General", (0.0, 20.0), (2.0, 5.0), 2050),
        Subset("i_Mid", (1.1, 10.0), (2.0, 10.0), 300),
        Subset("i_low", (0.0, 1.1), (0.0, 500.0), 300),
        Subset("t_fin", (0.7, 1.1), (500.0, 500.0), 300),
    ],
}

_TESTVAL_TABLES: Dict[str, List[Subset]] = {
    "fhn": [
        Subset("t0", None, (0.0, 0.0), 10),
        Subset("General", (0.1, 2.0), (0.01, 100.0), 285),
        Subset("nap", (1e-4, 0.01), (0.01, 100.0), 30),
        Subset("t_fin", (0.3, 3.0), (100.0, 100.0), 50),
    ],
    "hh": [
        Subset("t0", None, (0.0, 0.0), 10),
        Subset("General", (2.0, 10.0), (0.01, 100.0), 275),
        Subset("nap", (1e-4, 2.0), (0.01, 100.0), 30),
        Subset("i_high", (50.0, 200.0), (0.01, 100.0), 30),
        Subset("t_fin", (2.0, 30.0), (100.0, 100.0), 30),
    ],
    "ord": [
        Subset("t0", None, (0.0, 0.0), 15),
        Subset("General", (0.0, 20.0), (2.0, 5.0), 270),
        Subset("i_Mid", (1.1, 10.0), (2.0, 10.0), 30),
        Subset("i_low", (0.0, 1.1), (0.0, 500.0), 30),
        Subset("t_fin", (0.7, 1.1), (500.0, 500.0), 30),
    ],
}

SPLITS = ("train", "val", "test")


def build_plan(model: str, split: str, scale: float = 1.0) -> SamplingPlan:
    """Subset table for (model, split), with counts scaled by ceil(count * scale)."""
    if model not in _TRAIN_TABLES:
        raise PlanError(f"unknown model {model!r}; expected one of {sorted(_TRAIN_TABLES)}")
    if split not in SPLITS:
        raise PlanError(f"unknown split {split!r}; expected one of {SPLITS}")
    if scale <= 0:
        raise PlanError("scale must be positive")
    table = _TRAIN_TABLES[model] if split == "train" else _TESTVAL_TABLES[model]
    subsets = tuple(
        Subset(s.name, s.i_range, s.t_range, math.ceil(s.count * scale)) for s in table
    )
    return SamplingPlan(model, split, subsets)


def sample_protocols(plan: SamplingPlan, seed: int) -> List[Tuple[str, StimulusProtocol]]:
    """Uniform i.i.d. protocols per subset, concatenated in table order."""
    rng = np.random.default_rng(seed)
    out: List[Tuple[str, StimulusProtocol]] = []
    for s in plan.subsets:
        if s.i_range is None:
            amps = np.zeros(s.count)
        elif s.i_range[0] == s.i_range[1]:
            amps = np.full(s.count, s.i_range[0])
        else:
            amps = rng.uniform(s.i_range[0], s.i_range[1], s.count)
        if s.t_range[0] == s.t_range[1]:
            durs = np.full(s.count, s.t_range[0])
        else:
            durs = rng.uniform(s.t_range[0], s.t_range[1], s.count)
        out.extend((s.name, StimulusProtocol(float(a), float(d))) for a, d in zip(amps, durs))
    return out


@dataclass
class Record:
    subset: str
    protocol: StimulusProtocol
    values: np.ndarray  # [n_dim, n_points]


@dataclass
class Dataset:
    model: str
    split: str
    t_final: float
    n_points: int
    channel_names: Tuple[str, ...]
    records: List[Record]
    stats: Optional[Dict[str, Tuple[float, float]]] = None
    meta: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_points)

    def stimulus_matrix(self) -> np.ndarray:
        """[n_records, n_points] applied-current samples, recomputed from protocols."""
        grid = self.grid
        return np.stack(
            [np.where(grid <= r.protocol.duration, r.protocol.amplitude, 0.0) for r in self.records]
        )

    def value_tensor(self) -> np.ndarray:
        return np.stack([r.values for r in self.records])


def _worker_count() -> int:
    raw = os.environ.get("IONOP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def generate(
    plan: SamplingPlan,
    seed: int,
    n_points: int = 256,
    rtol: float = 1e-6,
    atol: float = 1e-8,
) -> Dataset:
    """Solve one trajectory per sampled protocol.

    Training-split datasets carry per-channel min/max statistics; other splits
    are normalized with the training file's statistics at training time.
    """
    if plan.model not in MODELS:
        raise GenerationError(
            f"model {plan.model!r} has no built-in solver; generate its data externally"
        )
    model = MODELS[plan.model]
    protocols = sample_protocols(plan, seed)

    def solve_one(item):
        idx, (subset, proto) = item
        try:
            traj = simulate(model, proto, n_points=n_points, rtol=rtol, atol=atol)
        except Exception as exc:
            raise GenerationError(
                f"record {idx} (subset {subset}, i={proto.amplitude:.6g}, "
                f"T_stim={proto.duration:.6g}): {exc}",
                index=idx,
            ) from exc
        return Record(subset, proto, traj.values)

    workers = _worker_count()
    items = list(enumerate(protocols))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(solve_one, items))
    else:
        records = [solve_one(it) for it in items]

    ds = Dataset(
        model=plan.model,
        split=plan.split,
        t_final=model.t_final,
        n_points=n_points,
        channel_names=model.channel_names,
        records=records,
        meta={
            "seed": seed,
            "rtol": rtol,
            "atol": atol,
            "subset_counts": {s.name: s.count for s in plan.subsets},
        },
    )
    if plan.split == "train":
        ds.stats = compute_stats(ds)
    return ds


# ---------------------------------------------------------------------------
# normalization


def compute_stats(ds: Dataset) -> Dict[str, Tuple[float, float]]:
    """Per-channel (min, max) over every record, including the stimulus channel."""
    stats: Dict[str, Tuple[float, float]] = {}
    values = ds.value_tensor()
    for c, name in enumerate(ds.channel_names):
        stats[name] = (float(values[:, c].min()), float(values[:, c].max()))
    stim = ds.stimulus_matrix()
    stats["I_app"] = (float(stim.min()), float(stim.max()))
    return stats


def normalize_channel(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map onto [0, 1]; a degenerate range maps everything to 0.5."""
    if hi - lo <= 0.0:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def denormalize_channel(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi - lo <= 0.0:
        return np.full_like(x, lo)
    return x * (hi - lo) + lo


def normalize_values(values: np.ndarray, names, stats) -> np.ndarray:
    """Normalize a [..., n_channels, n] stack channel by channel."""
    out = np.empty_like(values)
    for c, name in enumerate(names):
        lo, hi = stats[name]
        out[..., c, :] = normalize_channel(values[..., c, :], lo, hi)
    return out


def denormalize_values(values: np.ndarray, names, stats) -> np.ndarray:
    out = np.empty_like(values)
    for c, name in enumerate(names):
        lo, hi = stats[name]
        out[..., c, :] = denormalize_channel(values[..., c, :], lo, hi)
    return out


# ---------------------------------------------------------------------------
# binary save / load


def save(ds: Dataset, path) -> Path:
    """Write `<path>` (binary payload) and `<path>.json` (sidecar). Deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", _MODEL_IDS[ds.model]))
        fh.write(struct.pack("<d", ds.t_final))
        fh.write(struct.pack("<Q", ds.n_points))
        fh.write(struct.pack("<I", len(ds.channel_names)))
        for name in ds.channel_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(struct.pack("<Q", len(ds.records)))
        for rec in ds.records:
            fh.write(struct.pack("<dd", rec.protocol.amplitude, rec.protocol.duration))
            fh.write(np.ascontiguousarray(rec.values, dtype="<f8").tobytes())
    sidecar = {
        "magic": "IONDS1",
        "version": VERSION,
        "model": ds.model,
        "split": ds.split,
        "t_final": ds.t_final,
        "n_points": ds.n_points,
        "n_dim": len(ds.channel_names),
        "channel_names": list(ds.channel_names),
        "n_records": len(ds.records),
        "subsets": [rec.subset for rec in ds.records],
        "stats": {k: list(v) for k, v in ds.stats.items()} if ds.stats else None,
        "meta": ds.meta,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError("truncated dataset payload")
    return data


def load(path) -> Dataset:
    """Read and validate a dataset; trajectories are re-checked on load."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FormatError(f"{path}: bad magic, not a dataset file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (model_id,) = struct.unpack("<B", _read_exact(fh, 1))
        if model_id not in _MODEL_NAMES:
            raise FormatError(f"{path}: unknown model id {model_id}")
        model = _MODEL_NAMES[model_id]
        (t_final,) = struct.unpack("<d", _read_exact(fh, 8))
        (n_points,) = struct.unpack("<Q", _read_exact(fh, 8))
        (n_dim,) = struct.unpack("<I", _read_exact(fh, 4))
        names = []
        for _ in range(n_dim):
            (ln,) = struct.unpack("<I", _read_exact(fh, 4))
            names.append(_read_exact(fh, ln).decode("utf-8"))
        (n_records,) = struct.unpack("<Q", _read_exact(fh, 8))
        records = []
        for _ in range(n_records):
            amp, dur = struct.unpack("<dd", _read_exact(fh, 16))
            values = np.frombuffer(
                _read_exact(fh, 8 * n_dim * n_points), dtype="<f8"
            ).reshape(n_dim, n_points)
            records.append(Record("", StimulusProtocol(amp, dur), values.copy()))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after declared records")

    sidecar_path = Path(str(path) + ".json")
    split, stats, meta = "train", None, {}
    if sidecar_path.exists():
        side = json.loads(sidecar_path.read_text())
        if side.get("n_records") != n_records:
            raise FormatError(f"{path}: sidecar record count disagrees with header")
        split = side.get("split", "train")
        stats = {k: tuple(v) for k, v in side["stats"].items()} if side.get("stats") else None
        meta = side.get("meta", {})
        subsets = side.get("subsets")
        if subsets:
            if len(subsets) != n_records:
                raise FormatError(f"{path}: sidecar subset labels disagree with record count")
            for rec, sub in zip(records, subsets):
                rec.subset = sub

    ds = Dataset(model, split, t_final, int(n_points), tuple(names), records, stats, meta)
    validate(ds)
    return ds


def validate(ds: Dataset) -> None:
    """Finiteness for all channels; gating bounds for the HH model."""
    for idx, rec in enumerate(ds.records):
        if not np.all(np.isfinite(rec.values)):
            raise FormatError(f"record {idx}: non-finite trajectory values")
    if ds.model == "hh":
        gate_rows = [i for i, n in enumerate(ds.channel_names) if n in ("m", "h", "n")]
        for idx, rec in enumerate(ds.records):
            gates = rec.values[gate_rows]
            if gates.min() < -1e-6 or gates.max() > 1 + 1e-6:
                raise FormatError(f"record {idx}: gating variable outside [0, 1] tolerance")


def export_csv(ds: Dataset, index: int, path) -> Path:
    """Write one record as `time, I_app, <channels...>` for plotting."""
    if not 0 <= index < len(ds.records):
        raise IndexError(f"record index {index} out of range")
    rec = ds.records[index]
    grid = ds.grid
    stim = np.where(grid <= rec.protocol.duration, rec.protocol.amplitude, 0.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "time,I_app," + ",".join(ds.channel_names)
    table = np.column_stack([grid, stim, rec.values.T])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path
