"""Random hyperparameter search with successive-halving promotion.

Configurations are drawn uniformly from the search space (log-uniform for
learning rate and weight decay). Trials advance through a geometric ladder
of epoch budgets; after each rung only the top 1/eta fraction by validation
relative L2 continues. The constrained mode rejection-samples architectures
until the trainable-parameter count falls inside a window around the budget.

Each rung retrains from scratch at that rung's epoch budget with the trial's
fixed seed, which makes every number in the search reproducible from the
master seed alone and lets an interrupted search resume from its event log.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fno import Fno, FnoConfig, count_params
from .train import History, TrainConfig, TrainingData, TrainingError, fit

DEFAULT_BUDGET = 500_000
BUDGET_WINDOW = (0.5, 1.3)  # published near-budget optima land at 0.51-0.63 M
MAX_REJECTIONS = 1000


class InfeasibleBudgetError(RuntimeError):
    """Rejection sampling could not hit the parameter-count window."""


@dataclass(frozen=True)
class SearchSpace:
    lr_range: Tuple[float, float] = (1e-4, 1e-2)
    weight_decay_range: Tuple[float, float] = (1e-5, 1e-2)
    scheduler_factor_range: Tuple[float, float] = (0.8, 1.0)
    widths: Tuple[int, ...] = (32, 64, 96, 128, 192, 224, 256)
    depths: Tuple[int, ...] = (2, 3, 4, 5, 6)
    modes_range: Tuple[int, int] = (5, 48)
    activations: Tuple[str, ...] = ("gelu", "leaky_relu", "relu", "tanh")
    padding_range: Tuple[int, int] = (0, 16)
    variants: Tuple[str, ...] = ("classic", "mlp")


def sample_config(
    space: SearchSpace,
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    budget: Optional[int] = None,
) -> Tuple[FnoConfig, TrainConfig]:
    """One uniform draw; with a budget, redraw until the count fits the window."""
    for _ in range(MAX_REJECTIONS):
        lr = float(10.0 ** rng.uniform(math.log10(space.lr_range[0]), math.log10(space.lr_range[1])))
        wd = float(
            10.0
            ** rng.uniform(math.log10(space.weight_decay_range[0]), math.log10(space.weight_decay_range[1]))
        )
        gamma = float(rng.uniform(*space.scheduler_factor_range))
        fno_cfg = FnoConfig(
            in_channels=in_channels,
            out_channels=out_channels,
            width=int(rng.choice(space.widths)),
            depth=int(rng.choice(space.depths)),
            modes=int(rng.integers(space.modes_range[0], space.modes_range[1] + 1)),
            activation=str(rng.choice(space.activations)),
            padding=int(rng.integers(space.padding_range[0], space.padding_range[1] + 1)),
            variant=str(rng.choice(space.variants)),
        )
        train_cfg = TrainConfig(lr=lr, weight_decay=wd, scheduler_factor=gamma)
        if budget is None:
            return fno_cfg, train_cfg
        count = count_params(fno_cfg)
        if BUDGET_WINDOW[0] * budget <= count <= BUDGET_WINDOW[1] * budget:
            return fno_cfg, train_cfg
    raise InfeasibleBudgetError(
        f"no architecture inside [{BUDGET_WINDOW[0]:g}, {BUDGET_WINDOW[1]:g}] x {budget} "
        f"after {MAX_REJECTIONS} draws"
    )


def asha_promote(trials: Sequence[Tuple[int, float, int]], reduction: int) -> List[int]:
    """Ids of the top ceil(k/reduction) trials by (val_l2, param_count, id)."""
    if not trials:
        return []
    ranked = sorted(trials, key=lambda t: (t[1], t[2], t[0]))
    keep = math.ceil(len(ranked) / reduction)
    return [t[0] for t in ranked[:keep]]


@dataclass
class TrialResult:
    trial: int
    seed: int
    fno_config: dict
    train_config: dict
    param_count: int
    rungs: List[dict] = field(default_factory=list)  # {"rung", "epochs", "val_l2"}
    status: str = "pending"  # "stopped" | "completed" | "failed"
    final_test_l2: Optional[float] = None
    wall_ms: float = 0.0

    @property
    def rung_reached(self) -> int:
        return len(self.rungs)

    def last_val(self) -> float:
        return self.rungs[-1]["val_l2"] if self.rungs else math.inf

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SearchResult:
    best: TrialResult
    trials: List[TrialResult]
    best_params: object
    best_history: History


def _trial_seed(master_seed: int, trial: int) -> int:
    return (master_seed * 100_003 + trial) % 2**31


def _load_events(path: Path) -> Dict[Tuple[int, int], dict]:
    events: Dict[Tuple[int, int], dict] = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            e = json.loads(line)
            events[(e["trial"], e["rung"])] = e
    return events


def run_search(
    space: SearchSpace,
    n_trials: int,
    rungs: Sequence[int],
    mode: str,
    data: TrainingData,
    master_seed: int,
    out_dir,
    reduction: int = 3,
    budget: int = DEFAULT_BUDGET,
    trainer=fit,
) -> SearchResult:
    """Execute the search; persists an event log, trial results, and a leaderboard.

    `trainer` has the signature of `train.fit` and exists so tests can count
    or stub the trainings actually executed.
    """
    if mode not in ("constrained", "unconstrained"):
        raise ValueError("mode must be 'constrained' or 'unconstrained'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.jsonl"
    events = _load_events(events_path)

    rng = np.random.default_rng(master_seed)
    trials: List[TrialResult] = []
    for i in range(n_trials):
        fno_cfg, train_cfg = sample_config(
            space,
            rng,
            in_channels=data.in_channels,
            out_channels=data.out_channels,
            budget=budget if mode == "constrained" else None,
        )
        train_cfg.seed = _trial_seed(master_seed, i)
        trials.append(
            TrialResult(
                trial=i,
                seed=train_cfg.seed,
                fno_config=fno_cfg.to_dict(),
                train_config=train_cfg.to_dict(),
                param_count=count_params(fno_cfg),
            )
        )

    def train_rung(result: TrialResult, rung_idx: int) -> float:
        key = (result.trial, rung_idx)
        if key in events:
            val = float(events[key]["val_l2"])
            result.rungs.append({"rung": rung_idx, "epochs": rungs[rung_idx], "val_l2": val})
            return val
        start = time.perf_counter()
        cfg = TrainConfig.from_dict(result.train_config)
        cfg.epochs = int(rungs[rung_idx])
        model = Fno.create(FnoConfig.from_dict(result.fno_config), seed=result.seed)
        try:
            _, history = trainer(model, data, cfg)
            val = history.best_val_l2
        except TrainingError:
            val = math.inf
            result.status = "failed"
        result.wall_ms += (time.perf_counter() - start) * 1e3
        result.rungs.append({"rung": rung_idx, "epochs": rungs[rung_idx], "val_l2": val})
        with open(events_path, "a") as fh:
            fh.write(json.dumps({"trial": result.trial, "rung": rung_idx, "val_l2": val}) + "\n")
        return val

    alive = list(range(n_trials))
    for rung_idx in range(len(rungs)):
        scores = []
        for tid in alive:
            val = train_rung(trials[tid], rung_idx)
            scores.append((tid, val, trials[tid].param_count))
        if rung_idx < len(rungs) - 1:
            survivors = asha_promote(scores, reduction)
            for tid in alive:
                if tid not in survivors and trials[tid].status == "pending":
                    trials[tid].status = "stopped"
            alive = survivors
        else:
            for tid in alive:
                if trials[tid].status == "pending":
                    trials[tid].status = "completed"

    finalists = [t for t in trials if t.status == "completed"]
    if not finalists:
        raise RuntimeError("every trial failed; nothing to promote")
    best = min(finalists, key=lambda t: (t.last_val(), t.param_count, t.trial))

    # Retrain the winning config to the full (last-rung) epoch budget and
    # measure its test error with the resulting weights.
    final_cfg = TrainConfig.from_dict(best.train_config)
    final_cfg.epochs = int(rungs[-1])
    best_model = Fno.create(FnoConfig.from_dict(best.fno_config), seed=best.seed)
    best_params, best_history = trainer(best_model, data, final_cfg)
    if best_history.test_l2:
        for t in finalists:
            if t.trial == best.trial:
                t.final_test_l2 = best_history.test_l2[best_history.best_epoch]

    with open(out_dir / "trials.jsonl", "w") as fh:
        for t in trials:
            fh.write(t.to_json() + "\n")
    _write_leaderboard(out_dir / "leaderboard.csv", trials)
    return SearchResult(best, trials, best_params, best_history)


def _write_leaderboard(path: Path, trials: Sequence[TrialResult]) -> None:
    ranked = sorted(trials, key=lambda t: (-t.rung_reached, t.last_val(), t.param_count, t.trial))
    with open(path, "w") as fh:
        fh.write("rank,trial,status,rung_reached,val_l2,param_count,width,depth,modes,variant,lr\n")
        for rank, t in enumerate(ranked, 1):
            fh.write(
                f"{rank},{t.trial},{t.status},{t.rung_reached},{t.last_val()!r},"
                f"{t.param_count},{t.fno_config['width']},{t.fno_config['depth']},"
                f"{t.fno_config['modes']},{t.fno_config['variant']},{t.train_config['lr']!r}\n"
            )
