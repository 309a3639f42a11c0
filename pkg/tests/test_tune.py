import json
import math

import numpy as np
import pytest

from ionop import dataset as dsm
from ionop import train as tr
from ionop import tune
from ionop.fno import FnoConfig, count_params
from ionop.train import History, TrainConfig


# ---------------------------------------------------------------------------
# sampling


def test_sample_sequence_is_deterministic():
    space = tune.SearchSpace()
    a = [tune.sample_config(space, np.random.default_rng(5), 2, 2) for _ in range(10)]
    b = [tune.sample_config(space, np.random.default_rng(5), 2, 2) for _ in range(10)]
    assert [(f.to_dict(), t.to_dict()) for f, t in a] == [(f.to_dict(), t.to_dict()) for f, t in b]


def test_unconstrained_draws_stay_in_space():
    space = tune.SearchSpace()
    rng = np.random.default_rng(1)
    for _ in range(25):
        fno_cfg, train_cfg = tune.sample_config(space, rng, 2, 4)
        assert fno_cfg.width in space.widths
        assert fno_cfg.depth in space.depths
        assert space.modes_range[0] <= fno_cfg.modes <= space.modes_range[1]
        assert fno_cfg.activation in space.activations
        assert space.padding_range[0] <= fno_cfg.padding <= space.padding_range[1]
        assert fno_cfg.variant in space.variants
        assert space.lr_range[0] <= train_cfg.lr <= space.lr_range[1]
        assert space.weight_decay_range[0] <= train_cfg.weight_decay <= space.weight_decay_range[1]
        assert space.scheduler_factor_range[0] <= train_cfg.scheduler_factor <= space.scheduler_factor_range[1]


def test_constrained_draws_hit_budget_window():
    space = tune.SearchSpace()
    rng = np.random.default_rng(2)
    for _ in range(20):
        fno_cfg, _ = tune.sample_config(space, rng, 2, 2, budget=500_000)
        assert 250_000 <= count_params(fno_cfg) <= 650_000


def test_infeasible_budget_raises():
    space = tune.SearchSpace()
    with pytest.raises(tune.InfeasibleBudgetError):
        tune.sample_config(space, np.random.default_rng(3), 2, 2, budget=1000)


# ---------------------------------------------------------------------------
# promotion


def test_promotion_arithmetic():
    nine = [(i, 0.1 * (i + 1), 1000) for i in range(9)]
    assert tune.asha_promote(nine, 3) == [0, 1, 2]
    three = [(i, 0.1 * (i + 1), 1000) for i in range(3)]
    assert tune.asha_promote(three, 3) == [0]


def test_single_trial_is_always_promoted():
    assert tune.asha_promote([(7, 0.9, 123)], 3) == [7]


def test_ties_break_by_parameter_count_then_id():
    trials = [(0, 0.5, 900), (1, 0.5, 100), (2, 0.5, 100)]
    assert tune.asha_promote(trials, 3) == [1]


# ---------------------------------------------------------------------------
# run_search with a stub trainer (scheduler arithmetic, logs, resume)


def make_stub(counter):
    def stub(model, data, cfg):
        counter.append((cfg.seed, cfg.epochs))
        # deterministic pseudo-validation: improves with epochs, varies by seed
        val = ((cfg.seed % 97) + 1) / (100.0 * cfg.epochs)
        h = History()
        h.epochs = list(range(cfg.epochs))
        h.train_l2 = [val] * cfg.epochs
        h.test_l1 = [val] * cfg.epochs
        h.test_l2 = [val] * cfg.epochs
        h.test_h1 = [2 * val] * cfg.epochs
        h.val_l2 = [val] * cfg.epochs
        h.lr = [cfg.lr] * cfg.epochs
        h.wall_ms = [0.0] * cfg.epochs
        h.best_epoch = cfg.epochs - 1
        h.best_val_l2 = val
        return model.params, h

    return stub


@pytest.fixture
def fake_data():
    x = np.zeros((4, 2, 32))
    y = np.zeros((4, 2, 32))
    return tr.TrainingData(x, y, x, y, x, y, {}, ("V", "w"), 0.1)


def test_search_executes_expected_rung_counts(fake_data, tmp_path):
    counter = []
    result = tune.run_search(
        tune.SearchSpace(), 12, rungs=(2, 6, 18), mode="unconstrained",
        data=fake_data, master_seed=42, out_dir=tmp_path, trainer=make_stub(counter),
    )
    by_epochs = {}
    for _, epochs in counter:
        by_epochs[epochs] = by_epochs.get(epochs, 0) + 1
    assert by_epochs[2] == 12
    assert by_epochs[6] == 4
    # rung 3 runs ceil(4/3)=2 trials plus the final full-budget retrain
    assert by_epochs[18] == 2 + 1
    assert len(result.trials) == 12
    assert result.best.status == "completed"
    assert result.best.final_test_l2 is not None


def test_search_writes_one_jsonl_line_per_trial(fake_data, tmp_path):
    tune.run_search(
        tune.SearchSpace(), 12, rungs=(2, 6), mode="unconstrained",
        data=fake_data, master_seed=1, out_dir=tmp_path, trainer=make_stub([]),
    )
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert len(lines) == 12
    parsed = [json.loads(l) for l in lines]
    assert [p["trial"] for p in parsed] == list(range(12))
    statuses = {p["status"] for p in parsed}
    assert statuses <= {"stopped", "completed"}
    assert (tmp_path / "leaderboard.csv").exists()


def test_search_never_trains_unpromoted_trials(fake_data, tmp_path):
    counter = []
    tune.run_search(
        tune.SearchSpace(), 9, rungs=(2, 6, 18), mode="unconstrained",
        data=fake_data, master_seed=3, out_dir=tmp_path, trainer=make_stub(counter),
    )
    rung2_seeds = {s for s, e in counter if e == 6}
    rung3_seeds = {s for s, e in counter if e == 18}
    assert len(rung2_seeds) == 3
    assert rung3_seeds <= rung2_seeds


def test_constrained_search_respects_budget(fake_data, tmp_path):
    result = tune.run_search(
        tune.SearchSpace(), 6, rungs=(2,), mode="constrained",
        data=fake_data, master_seed=9, out_dir=tmp_path, trainer=make_stub([]),
    )
    for t in result.trials:
        assert 250_000 <= t.param_count <= 650_000


def test_resume_skips_completed_rungs_and_reproduces_results(fake_data, tmp_path):
    counter1 = []
    r1 = tune.run_search(
        tune.SearchSpace(), 6, rungs=(2, 6), mode="unconstrained",
        data=fake_data, master_seed=11, out_dir=tmp_path, trainer=make_stub(counter1),
    )
    first = (tmp_path / "trials.jsonl").read_text()
    leaderboard1 = (tmp_path / "leaderboard.csv").read_text()

    counter2 = []
    r2 = tune.run_search(
        tune.SearchSpace(), 6, rungs=(2, 6), mode="unconstrained",
        data=fake_data, master_seed=11, out_dir=tmp_path, trainer=make_stub(counter2),
    )
    # only the final best-config retrain reruns; every rung comes from the log
    assert len(counter2) == 1
    assert (tmp_path / "leaderboard.csv").read_text() == leaderboard1
    assert r2.best.trial == r1.best.trial
    for a, b in zip(r1.trials, r2.trials):
        assert a.rungs == b.rungs and a.status == b.status


def test_search_rejects_unknown_mode(fake_data, tmp_path):
    with pytest.raises(ValueError):
        tune.run_search(tune.SearchSpace(), 2, rungs=(1,), mode="bayes",
                        data=fake_data, master_seed=0, out_dir=tmp_path, trainer=make_stub([]))


# ---------------------------------------------------------------------------
# end-to-end search on real (tiny) training


def test_search_end_to_end_tiny(tmp_path):
    train_ds = dsm.generate(dsm.build_plan("fhn", "train", scale=0.01), seed=31)
    val_ds = dsm.generate(dsm.build_plan("fhn", "val", scale=0.01), seed=32)
    test_ds = dsm.generate(dsm.build_plan("fhn", "test", scale=0.01), seed=33)
    data = tr.prepare(train_ds, val_ds, test_ds)
    space = tune.SearchSpace(
        widths=(8, 12), depths=(1, 2), modes_range=(4, 8),
        activations=("gelu",), padding_range=(0, 2), variants=("classic",),
    )
    result = tune.run_search(space, 4, rungs=(1, 2), mode="unconstrained",
                             data=data, master_seed=17, out_dir=tmp_path)
    assert result.best.final_test_l2 is not None
    assert math.isfinite(result.best.last_val())
    vals = [t.rungs[0]["val_l2"] for t in result.trials]
    assert result.best.rungs[0]["val_l2"] <= sorted(vals)[len(vals) // 2]
