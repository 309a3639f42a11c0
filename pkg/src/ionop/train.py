"""Loss, error norms, AdamW with a stepped schedule, and the training loop.

The training loss is the channel-mean relative L2 norm on normalized
channels; evaluation reports relative L1/L2/H1 per sample in both normalized
and physical units. Channels whose truth norm is exactly zero (possible for
the zero-stimulus subset in physical units) are handled by an epsilon
proportional to the channel's RMS over the batch or split.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, denormalize_values, normalize_channel, normalize_values
from .fno import Fno, FnoConfig, FnoParams, NumericError, build_graph
from .tensor import Node, backward, div, mul, sqrt, sub, sum_all, sum_last

EPS_REL = 1e-8  # relative-loss denominator guard, scaled by channel RMS


class DegenerateChannelError(ValueError):
    """A truth channel with zero norm makes the relative error undefined."""


class OptimizerError(RuntimeError):
    """Non-finite gradient encountered; carries the parameter name."""


class TrainingError(RuntimeError):
    """Numeric failure mid-training; carries epoch/batch and the last good weights."""

    def __init__(self, message: str, epoch: int, batch: int, last_params=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.last_params = last_params


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    scheduler_factor: float = 1.0
    scheduler_period: int = 10
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.scheduler_factor <= 1:
            raise ValueError("scheduler_factor must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d).validate()


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Stepped decay: lr * factor^(epoch // period)."""
    return config.lr * config.scheduler_factor ** (epoch // config.scheduler_period)


# ---------------------------------------------------------------------------
# error norms


def _diff_quotient(x: np.ndarray, dt: float) -> np.ndarray:
    """Central differences along the grid axis, one-sided at the endpoints."""
    d = np.empty_like(x)
    d[..., 1:-1] = (x[..., 2:] - x[..., :-2]) / (2.0 * dt)
    d[..., 0] = (x[..., 1] - x[..., 0]) / dt
    d[..., -1] = (x[..., -1] - x[..., -2]) / dt
    return d


def relative_metric(
    truth: np.ndarray,
    pred: np.ndarray,
    norm: str = "l2",
    dt: float = 1.0,
    denom_floor: Optional[np.ndarray] = None,
) -> float:
    """Channel-mean relative L1/L2/H1 error of [n_dim, n] arrays.

    `denom_floor` (per channel) guards zero-norm truth channels; without it a
    zero-norm channel raises DegenerateChannelError.
    """
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise ValueError(f"relative_metric: shapes {truth.shape} vs {pred.shape}")
    err = pred - truth
    if norm == "l1":
        num = np.abs(err).sum(axis=-1)
        den = np.abs(truth).sum(axis=-1)
    elif norm == "l2":
        num = np.sqrt((err**2).sum(axis=-1))
        den = np.sqrt((truth**2).sum(axis=-1))
    elif norm == "h1":
        de = _diff_quotient(err, dt)
        du = _diff_quotient(truth, dt)
        num = np.sqrt((err**2).sum(axis=-1) + (de**2).sum(axis=-1))
        den = np.sqrt((truth**2).sum(axis=-1) + (du**2).sum(axis=-1))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if denom_floor is not None:
        den = den + np.asarray(denom_floor)
    elif np.any(den == 0.0):
        bad = int(np.argmax(den == 0.0))
        raise DegenerateChannelError(f"truth channel {bad} has zero norm")
    return float(np.mean(num / den))


def relative_l2_loss(truth: np.ndarray, pred: np.ndarray) -> float:
    """Channel-mean relative L2 error; raises on a zero-norm truth channel."""
    return relative_metric(truth, pred, "l2")


def relative_l2_loss_node(pred: Node, truth: np.ndarray) -> Node:
    """Differentiable batch loss on [batch, c, n] (or [c, n]) normalized channels.

    Denominators are truth norms plus EPS_REL times the channel RMS over the
    batch, so zero-norm truth channels stay finite.
    """
    t = np.asarray(truth, dtype=np.float64)
    squeeze = t.ndim == 2
    if squeeze:
        t = t[None]
    b, c, n = t.shape
    den = np.sqrt((t**2).sum(axis=-1))  # [b, c]
    rms = np.sqrt(np.mean(t**2, axis=(0, 2)))  # [c]
    den = den + EPS_REL * rms[None, :] + 1e-300
    diff = sub(pred if not squeeze else _unsqueeze(pred), Node(t))
    per_chan = sum_last(mul(diff, diff))
    num = sqrt(per_chan + 1e-24)
    return sum_all(div(num, Node(den))) * (1.0 / (b * c))


def _unsqueeze(node: Node) -> Node:
    v = node.value[None]
    return Node(v, (node,), lambda g: (g[0],))


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Decoupled weight decay plus bias-corrected adaptive moments.

    Complex parameters are updated through their float64 view, i.e. real and
    imaginary parts are treated as independent real parameters.
    """

    def __init__(self, params: Dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self.m = {k: np.zeros_like(self._real_view(v)) for k, v in params.items()}
        self.v = {k: np.zeros_like(self._real_view(v)) for k, v in params.items()}

    @staticmethod
    def _real_view(arr: np.ndarray) -> np.ndarray:
        return arr.view(np.float64) if np.iscomplexobj(arr) else arr

    def step(self, grads: Dict[str, Optional[np.ndarray]], lr: float) -> None:
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, p in self.params.items():
            g = grads.get(name)
            pv = self._real_view(p)
            if cfg.weight_decay:
                pv *= 1.0 - lr * cfg.weight_decay
            if g is None:
                continue
            gv = self._real_view(np.ascontiguousarray(g))
            if not np.all(np.isfinite(gv)):
                raise OptimizerError(f"non-finite gradient for parameter {name!r}")
            m, v = self.m[name], self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * gv
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * gv * gv
            pv -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def adamw_step(params: Dict[str, np.ndarray], grads, state: AdamW, config: TrainConfig, epoch: int) -> AdamW:
    """One optimizer step at the scheduled learning rate; state is mutated."""
    state.step(grads, lr_at(epoch, config))
    return state


# ---------------------------------------------------------------------------
# training data assembly


@dataclass
class TrainingData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    stats: Dict[str, Tuple[float, float]]
    channel_names: Tuple[str, ...]
    dt: float
    coord_channel: bool = True

    @property
    def in_channels(self) -> int:
        return self.x_train.shape[1]

    @property
    def out_channels(self) -> int:
        return self.y_train.shape[1]


def build_inputs(ds: Dataset, stats, coord_channel: bool = True) -> np.ndarray:
    """Stack the normalized stimulus channel and, optionally, t/T coordinates."""
    stim = normalize_channel(ds.stimulus_matrix(), *stats["I_app"])
    if not coord_channel:
        return stim[:, None, :]
    coord = np.broadcast_to(ds.grid / ds.t_final, stim.shape)
    return np.stack([stim, coord], axis=1)


def prepare(train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, coord_channel: bool = True) -> TrainingData:
    if train_ds.stats is None:
        raise ValueError("training split carries no normalization statistics")
    stats = train_ds.stats
    names = train_ds.channel_names

    def pack(ds):
        x = build_inputs(ds, stats, coord_channel)
        y = normalize_values(ds.value_tensor(), names, stats)
        return x, y

    x_tr, y_tr = pack(train_ds)
    x_va, y_va = pack(val_ds)
    x_te, y_te = pack(test_ds)
    dt = train_ds.t_final / (train_ds.n_points - 1)
    return TrainingData(x_tr, y_tr, x_va, y_va, x_te, y_te, stats, names, dt, coord_channel)


# ---------------------------------------------------------------------------
# history


@dataclass
class History:
    epochs: List[int] = field(default_factory=list)
    train_l2: List[float] = field(default_factory=list)
    test_l1: List[float] = field(default_factory=list)
    test_l2: List[float] = field(default_factory=list)
    test_h1: List[float] = field(default_factory=list)
    val_l2: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    wall_ms: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_l2: float = math.inf
    final_channel_errors: Dict[str, float] = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_l2", "test_l1", "test_l2", "test_h1", "lr", "wall_ms", "val_l2"])
            for i in range(len(self.epochs)):
                w.writerow(
                    [
                        self.epochs[i],
                        repr(self.train_l2[i]),
                        repr(self.test_l1[i]),
                        repr(self.test_l2[i]),
                        repr(self.test_h1[i]),
                        repr(self.lr[i]),
                        f"{self.wall_ms[i]:.3f}",
                        repr(self.val_l2[i]),
                    ]
                )
        return path


def _batched_predict(model: Fno, x: np.ndarray, chunk: int = 32) -> np.ndarray:
    outs = [model.predict(x[i : i + chunk]) for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


def _split_metrics(model: Fno, x: np.ndarray, y: np.ndarray, dt: float) -> Tuple[float, float, float]:
    pred = _batched_predict(model, x)
    floors = EPS_REL * np.sqrt(np.mean(y**2, axis=(0, 2)))
    l1 = float(np.mean([relative_metric(y[i], pred[i], "l1", dt, floors) for i in range(len(y))]))
    l2 = float(np.mean([relative_metric(y[i], pred[i], "l2", dt, floors) for i in range(len(y))]))
    h1 = float(np.mean([relative_metric(y[i], pred[i], "h1", dt, floors) for i in range(len(y))]))
    return l1, l2, h1


def fit(
    model: Fno,
    data: TrainingData,
    config: TrainConfig,
    stop_below: Optional[float] = None,
) -> Tuple[FnoParams, History]:
    """Mini-batch training; returns the best-validation weights and the history.

    Deterministic for a fixed seed: the per-epoch shuffle is seeded with
    (seed, epoch) and batch gradients are accumulated in a fixed order.
    `stop_below` ends training early once the epoch training loss falls
    under the threshold (used for budget-matched comparisons).
    """
    config.validate()
    opt = AdamW(model.params.arrays, config)
    n = len(data.x_train)
    history = History()
    best_params = model.params.clone()
    epoch = batch_idx = 0
    try:
        for epoch in range(config.epochs):
            start = time.perf_counter()
            lr = lr_at(epoch, config)
            perm = np.random.default_rng([config.seed, epoch]).permutation(n)
            loss_sum = 0.0
            for batch_idx, lo in enumerate(range(0, n, config.batch_size)):
                idx = perm[lo : lo + config.batch_size]
                xb = data.x_train[idx]
                yb = data.y_train[idx]
                nodes = model.param_nodes()
                out = build_graph(model.config, nodes, Node(xb))
                loss = relative_l2_loss_node(out, yb)
                backward(loss)
                grads = {name: node.grad for name, node in nodes.items()}
                opt.step(grads, lr)
                loss_sum += float(loss.value) * len(idx)
            train_l2 = loss_sum / n
            l1, l2, h1 = _split_metrics(model, data.x_test, data.y_test, data.dt)
            _, val_l2, _ = _split_metrics(model, data.x_val, data.y_val, data.dt)
            history.epochs.append(epoch)
            history.train_l2.append(train_l2)
            history.test_l1.append(l1)
            history.test_l2.append(l2)
            history.test_h1.append(h1)
            history.val_l2.append(val_l2)
            history.lr.append(lr)
            history.wall_ms.append((time.perf_counter() - start) * 1e3)
            if val_l2 < history.best_val_l2:
                history.best_val_l2 = val_l2
                history.best_epoch = epoch
                best_params = model.params.clone()
            if stop_below is not None and train_l2 <= stop_below:
                break
    except (OptimizerError, NumericError) as exc:
        raise TrainingError(
            f"numeric failure at epoch {epoch}, batch {batch_idx}: {exc}",
            epoch=epoch,
            batch=batch_idx,
            last_params=best_params,
        ) from exc

    # Per-channel relative L2 of the best weights on the test split.
    best_model = Fno(model.config, best_params)
    pred = _batched_predict(best_model, data.x_test)
    for c, name in enumerate(data.channel_names):
        num = math.sqrt(float(((pred[:, c] - data.y_test[:, c]) ** 2).sum()))
        den = math.sqrt(float((data.y_test[:, c] ** 2).sum()))
        history.final_channel_errors[name] = num / max(den, 1e-300)
    return best_params, history


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass
class EvalReport:
    per_sample: List[Dict]
    per_channel_norm: Dict[str, float]
    per_channel_phys: Dict[str, float]
    aggregate: Dict[str, float]

    def write_csv(self, out_dir) -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sample_path = out_dir / "per_sample.csv"
        keys = list(self.per_sample[0].keys())
        with open(sample_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for row in self.per_sample:
                w.writerow([row[k] if isinstance(row[k], (int, str)) else repr(row[k]) for k in keys])
        chan_path = out_dir / "per_channel.csv"
        with open(chan_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "rel_l2_normalized", "rel_l2_physical"])
            for name in self.per_channel_norm:
                w.writerow([name, repr(self.per_channel_norm[name]), repr(self.per_channel_phys[name])])
        return sample_path, chan_path


def evaluate(model, ds: Dataset, stats, coord_channel: bool = True) -> EvalReport:
    """Relative errors of `model.predict` on a dataset split.

    Per-sample relative L1/L2/H1 are reported on normalized channels and on
    physical (denormalized) values; per-channel relative L2 aggregates the
    norms over the whole split. `model` is anything with a
    ``predict([b, in, n]) -> [b, out, n]`` method.
    """
    names = ds.channel_names
    x = build_inputs(ds, stats, coord_channel)
    y_norm = normalize_values(ds.value_tensor(), names, stats)
    pred_norm = np.concatenate(
        [model.predict(x[i : i + 32]) for i in range(0, len(x), 32)], axis=0
    )
    if pred_norm.shape != y_norm.shape:
        raise ValueError(f"prediction shape {pred_norm.shape} does not match truth {y_norm.shape}")
    y_phys = ds.value_tensor()
    pred_phys = denormalize_values(pred_norm, names, stats)
    dt = ds.t_final / (ds.n_points - 1)

    floors_norm = EPS_REL * np.sqrt(np.mean(y_norm**2, axis=(0, 2)))
    floors_phys = EPS_REL * np.sqrt(np.mean(y_phys**2, axis=(0, 2)))

    per_sample: List[Dict] = []
    for i, rec in enumerate(ds.records):
        row: Dict = {
            "index": i,
            "subset": rec.subset,
            "i": rec.protocol.amplitude,
            "T_stim": rec.protocol.duration,
        }
        for norm in ("l1", "l2", "h1"):
            row[f"{norm}_norm"] = relative_metric(y_norm[i], pred_norm[i], norm, dt, floors_norm)
            row[f"{norm}_phys"] = relative_metric(y_phys[i], pred_phys[i], norm, dt, floors_phys)
        for c, name in enumerate(names):
            num = np.linalg.norm(pred_norm[i, c] - y_norm[i, c])
            den = np.linalg.norm(y_norm[i, c]) + floors_norm[c]
            row[f"l2_{name}"] = float(num / den)
        per_sample.append(row)

    per_channel_norm: Dict[str, float] = {}
    per_channel_phys: Dict[str, float] = {}
    for c, name in enumerate(names):
        per_channel_norm[name] = float(
            np.linalg.norm(pred_norm[:, c] - y_norm[:, c]) / max(np.linalg.norm(y_norm[:, c]), 1e-300)
        )
        per_channel_phys[name] = float(
            np.linalg.norm(pred_phys[:, c] - y_phys[:, c]) / max(np.linalg.norm(y_phys[:, c]), 1e-300)
        )

    aggregate = {}
    for key in ("l1_norm", "l2_norm", "h1_norm", "l1_phys", "l2_phys", "h1_phys"):
        vals = np.array([row[key] for row in per_sample])
        aggregate[f"mean_{key}"] = float(vals.mean())
        aggregate[f"std_{key}"] = float(vals.std())
    return EvalReport(per_sample, per_channel_norm, per_channel_phys, aggregate)
