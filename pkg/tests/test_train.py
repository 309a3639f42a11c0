import math

import numpy as np
import pytest

from ionop import dataset as dsm
from ionop import train as tr
from ionop.fno import Fno, FnoConfig
from ionop.tensor import Node

rng = np.random.default_rng(3)


# ---------------------------------------------------------------------------
# relative L2 loss (strict metric)


def test_loss_zero_for_perfect_prediction():
    u = rng.standard_normal((2, 16))
    assert tr.relative_l2_loss(u, u) == 0.0


def test_loss_full_relative_error():
    truth = np.array([[3.0, 4.0]])
    pred = np.zeros((1, 2))
    assert tr.relative_l2_loss(truth, pred) == pytest.approx(1.0)


def test_loss_is_channel_mean():
    u1 = rng.standard_normal(32)
    u2 = rng.standard_normal(32)
    truth = np.stack([u1, u2])
    pred = np.stack([u1 * 1.1, u2 * 1.3])  # relative errors exactly 0.1 and 0.3
    assert tr.relative_l2_loss(truth, pred) == pytest.approx(0.2, rel=1e-12)


def test_loss_scale_invariance():
    u = rng.standard_normal((3, 20))
    v = u + 0.1 * rng.standard_normal((3, 20))
    a = tr.relative_l2_loss(u, v)
    for alpha in (2.0, -0.037, 1e6):
        assert tr.relative_l2_loss(alpha * u, alpha * v) == pytest.approx(a, rel=1e-12)


def test_loss_rejects_zero_norm_channel():
    truth = np.zeros((2, 8))
    truth[1] = 1.0
    with pytest.raises(tr.DegenerateChannelError):
        tr.relative_l2_loss(truth, truth + 0.1)


def test_loss_nonnegative_and_zero_iff_equal():
    u = rng.standard_normal((2, 12))
    assert tr.relative_l2_loss(u, u + 1e-3) > 0.0
    assert tr.relative_l2_loss(u, u) == 0.0


def test_triangle_consistency():
    for _ in range(10):
        u = rng.standard_normal((1, 16))
        v = rng.standard_normal((1, 16))
        w = rng.standard_normal((1, 16))
        lhs = tr.relative_l2_loss(u, v)
        rhs = tr.relative_l2_loss(u, w) + np.linalg.norm(w - v) / np.linalg.norm(u)
        assert lhs <= rhs + 1e-12


def test_loss_node_matches_metric_and_is_differentiable():
    truth = rng.standard_normal((2, 3, 16))
    pred_arr = truth + 0.05 * rng.standard_normal((2, 3, 16))
    pred = Node(pred_arr, requires_grad=True)
    loss = tr.relative_l2_loss_node(pred, truth)
    expected = np.mean([tr.relative_l2_loss(truth[i], pred_arr[i]) for i in range(2)])
    assert float(loss.value) == pytest.approx(expected, rel=1e-6)
    from ionop.tensor import backward

    backward(loss)
    assert pred.grad is not None and np.all(np.isfinite(pred.grad))


def test_loss_node_survives_zero_norm_channel():
    truth = np.zeros((1, 2, 8))
    truth[0, 1] = 1.0
    pred = Node(truth + 0.01, requires_grad=True)
    loss = tr.relative_l2_loss_node(pred, truth)
    assert np.isfinite(float(loss.value))


# ---------------------------------------------------------------------------
# relative metrics


def test_metrics_zero_for_perfect_prediction():
    u = rng.standard_normal((2, 32))
    for norm in ("l1", "l2", "h1"):
        assert tr.relative_metric(u, u, norm, dt=0.1) == 0.0


def test_h1_equals_l2_when_derivatives_vanish():
    truth = np.full((1, 16), 3.0)
    pred = np.full((1, 16), 3.5)
    l2 = tr.relative_metric(truth, pred, "l2", dt=0.1)
    h1 = tr.relative_metric(truth, pred, "h1", dt=0.1)
    assert h1 == pytest.approx(l2, rel=1e-12)


def test_h1_inflates_high_frequency_error():
    # u = sin t, pred = u + 0.01 sin 40t. With exact derivatives the relative
    # errors are about 0.01 (L2) and sqrt((0.01^2 + 0.4^2)/2) ~ 0.28 (H1):
    # a ratio near 28, far above the asserted floor of 5.
    n = 256
    t = np.linspace(0.0, 2 * np.pi, n)
    dt = t[1] - t[0]
    u = np.sin(t)[None]
    pred = u + 0.01 * np.sin(40 * t)[None]
    l2 = tr.relative_metric(u, pred, "l2", dt=dt)
    h1 = tr.relative_metric(u, pred, "h1", dt=dt)
    closed_form = math.sqrt((0.01**2 + 0.4**2) / 2.0) / math.sqrt((1.0 + 1.0) / 2.0)
    assert l2 == pytest.approx(0.01, rel=0.05)
    assert h1 / l2 > 5.0
    assert h1 == pytest.approx(closed_form, rel=0.35)  # finite differences damp mode 40


# ---------------------------------------------------------------------------
# learning-rate schedule


def test_lr_schedule_values():
    cfg = tr.TrainConfig(lr=1e-3, scheduler_factor=0.9)
    assert tr.lr_at(25, cfg) == pytest.approx(8.1e-4)
    for e in range(10):
        assert tr.lr_at(e, cfg) == 1e-3
    flat = tr.TrainConfig(lr=5e-4, scheduler_factor=1.0)
    assert tr.lr_at(123, flat) == 5e-4


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_pure_decay_with_zero_gradient():
    cfg = tr.TrainConfig(lr=0.1, weight_decay=0.01, scheduler_factor=1.0)
    theta = np.array([2.0])
    opt = tr.AdamW({"w": theta}, cfg)
    opt.step({"w": np.array([0.0])}, lr=0.1)
    assert theta[0] == pytest.approx(2.0 * (1 - 0.1 * 0.01), rel=1e-15)


def test_adamw_no_decay_no_gradient_is_identity():
    cfg = tr.TrainConfig(lr=0.1, weight_decay=0.0)
    theta = np.array([2.0])
    opt = tr.AdamW({"w": theta}, cfg)
    opt.step({"w": np.array([0.0])}, lr=0.1)
    assert theta[0] == 2.0


def test_adamw_matches_hand_iteration():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    cfg = tr.TrainConfig(lr=lr, weight_decay=0.0, beta1=b1, beta2=b2, eps=eps)
    theta = np.array([0.5])
    opt = tr.AdamW({"w": theta}, cfg)

    ref, m, v = 0.5, 0.0, 0.0
    for t in range(1, 4):
        g = 1.0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        ref -= lr * mh / (math.sqrt(vh) + eps)
        opt.step({"w": np.array([1.0])}, lr=lr)
        assert theta[0] == pytest.approx(ref, abs=1e-12)


def test_adamw_first_step_is_sign_descent_when_betas_zero():
    cfg = tr.TrainConfig(lr=0.05, weight_decay=0.0, beta1=0.0, beta2=0.0)
    theta = np.array([1.0, -1.0])
    opt = tr.AdamW({"w": theta}, cfg)
    g = np.array([0.7, -0.2])
    opt.step({"w": g}, lr=0.05)
    np.testing.assert_allclose(theta, [1.0 - 0.05, -1.0 + 0.05], atol=1e-8)


def test_adamw_complex_parameters_update_like_real_pairs():
    cfg = tr.TrainConfig(lr=0.1, weight_decay=0.0)
    zc = np.array([1.0 + 2.0j])
    zr = np.array([1.0, 2.0])
    oc = tr.AdamW({"w": zc}, cfg)
    orr = tr.AdamW({"w": zr}, cfg)
    gc = np.array([0.3 - 0.4j])
    gr = np.array([0.3, -0.4])
    oc.step({"w": gc}, lr=0.1)
    orr.step({"w": gr}, lr=0.1)
    np.testing.assert_allclose([zc[0].real, zc[0].imag], zr, atol=1e-14)


def test_adamw_rejects_non_finite_gradient():
    cfg = tr.TrainConfig(lr=0.1)
    opt = tr.AdamW({"spooky": np.array([1.0])}, cfg)
    with pytest.raises(tr.OptimizerError, match="spooky"):
        opt.step({"spooky": np.array([np.nan])}, lr=0.1)


# ---------------------------------------------------------------------------
# fit / evaluate on tiny FHN data


@pytest.fixture(scope="module")
def tiny_data():
    train = dsm.generate(dsm.build_plan("fhn", "train", scale=0.03), seed=11)
    val = dsm.generate(dsm.build_plan("fhn", "val", scale=0.03), seed=12)
    test = dsm.generate(dsm.build_plan("fhn", "test", scale=0.03), seed=13)
    return tr.prepare(train, val, test), test, train.stats


def tiny_fno(**kw):
    base = dict(in_channels=2, out_channels=2, width=16, depth=2, modes=8,
                activation="gelu", padding=2, variant="mlp", projection_hidden=32)
    base.update(kw)
    return FnoConfig(**base)


def test_fit_memorizes_four_samples(tiny_data):
    data, _, _ = tiny_data
    sub = tr.TrainingData(
        data.x_train[1:5], data.y_train[1:5],
        data.x_val[:2], data.y_val[:2],
        data.x_test[:2], data.y_test[:2],
        data.stats, data.channel_names, data.dt,
    )
    model = Fno.create(tiny_fno(width=32, modes=16, padding=16), seed=4)
    cfg = tr.TrainConfig(lr=2e-2, weight_decay=0.0, scheduler_factor=0.8,
                         scheduler_period=50, epochs=500, batch_size=4, seed=4)
    _, hist = tr.fit(model, sub, cfg)
    assert hist.train_l2[-1] < 1e-2


def test_fit_loss_trends_down_and_history_is_consistent(tiny_data):
    data, _, _ = tiny_data
    model = Fno.create(tiny_fno(), seed=5)
    cfg = tr.TrainConfig(lr=2e-3, weight_decay=1e-5, scheduler_factor=0.97,
                         epochs=30, batch_size=32, seed=5)
    best, hist = tr.fit(model, data, cfg)
    assert len(hist.epochs) == 30
    assert all(np.isfinite(v) for v in hist.train_l2)
    assert hist.train_l2[-1] < 0.5 * hist.train_l2[0]
    # H1 never dips below L2 on recorded epochs for these rough-error models.
    assert all(h >= l for h, l in zip(hist.test_h1, hist.test_l2))
    assert hist.best_epoch >= 0
    assert set(hist.final_channel_errors) == {"V", "w"}


def test_fit_same_seed_identical_history(tiny_data):
    data, _, _ = tiny_data
    cfg = tr.TrainConfig(lr=1e-3, weight_decay=1e-4, scheduler_factor=0.9,
                         epochs=3, batch_size=16, seed=7)
    _, h1 = tr.fit(Fno.create(tiny_fno(), seed=7), data, cfg)
    _, h2 = tr.fit(Fno.create(tiny_fno(), seed=7), data, cfg)
    assert h1.train_l2 == h2.train_l2
    assert h1.val_l2 == h2.val_l2
    assert h1.test_h1 == h2.test_h1


def test_history_csv_roundtrip(tiny_data, tmp_path):
    data, _, _ = tiny_data
    cfg = tr.TrainConfig(lr=1e-3, epochs=2, batch_size=32, seed=1)
    _, hist = tr.fit(Fno.create(tiny_fno(), seed=1), data, cfg)
    p = hist.to_csv(tmp_path / "history.csv")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("epoch,train_l2,test_l1,test_l2,test_h1")
    assert len(lines) == 3


class EchoModel:
    """Returns the stored truths in evaluation order; a perfect oracle stub."""

    def __init__(self, y):
        self.y = y
        self.cursor = 0

    def predict(self, x):
        out = self.y[self.cursor : self.cursor + len(x)]
        self.cursor += len(x)
        return out.copy()


def test_evaluate_truth_echo_gives_zero_errors(tiny_data):
    data, test_ds, stats = tiny_data
    report = tr.evaluate(EchoModel(data.y_test), test_ds, stats)
    for row in report.per_sample:
        assert row["l2_norm"] == 0.0
        assert row["h1_norm"] == 0.0
    assert all(v == 0.0 for v in report.per_channel_norm.values())
    assert report.aggregate["mean_l2_norm"] == 0.0


def test_evaluate_per_sample_l2_is_mean_of_channel_values(tiny_data):
    data, test_ds, stats = tiny_data
    model = Fno.create(tiny_fno(), seed=2)
    report = tr.evaluate(model, test_ds, stats)
    for row in report.per_sample[:5]:
        per_chan = np.mean([row["l2_V"], row["l2_w"]])
        assert row["l2_norm"] == pytest.approx(per_chan, rel=1e-9)


def test_evaluate_writes_csv(tiny_data, tmp_path):
    data, test_ds, stats = tiny_data
    report = tr.evaluate(Fno.create(tiny_fno(), seed=2), test_ds, stats)
    sample_path, chan_path = report.write_csv(tmp_path)
    assert sample_path.read_text().splitlines()[0].startswith("index,subset,i,T_stim")
    assert len(chan_path.read_text().splitlines()) == 3
