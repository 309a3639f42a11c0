import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionop import dataset as dsm
from ionop.ionic import StimulusProtocol


# ---------------------------------------------------------------------------
# plans


def test_fhn_train_plan_matches_table():
    plan = dsm.build_plan("fhn", "train")
    names = [(s.name, s.count) for s in plan.subsets]
    assert names == [("t0", 20), ("General", 2480), ("nap", 500)]
    assert plan.total == 3000
    general = plan.subsets[1]
    assert general.i_range == (0.1, 2.0)
    assert general.t_range == (0.01, 100.0)


def test_hh_train_plan_matches_table():
    plan = dsm.build_plan("hh", "train")
    assert [(s.name, s.count) for s in plan.subsets] == [
        ("t0", 20), ("General", 2380), ("nap", 100), ("i_high", 300), ("t_fin", 200)
    ]
    assert plan.total == 3000
    assert plan.subsets[3].i_range == (50.0, 200.0)
    assert plan.subsets[4].t_range == (100.0, 100.0)


def test_fhn_test_plan_has_tfin_subset():
    plan = dsm.build_plan("fhn", "test")
    tfin = plan.subsets[-1]
    assert tfin.name == "t_fin"
    assert tfin.count == 50
    assert tfin.i_range == (0.3, 3.0)
    assert plan.total == 375


def test_desk_scale_totals():
    assert dsm.build_plan("fhn", "train", scale=0.1).total == 300
    assert dsm.build_plan("fhn", "test", scale=0.1).total == 38
    assert dsm.build_plan("fhn", "val", scale=0.1).total == 38
    assert dsm.build_plan("hh", "train", scale=0.1).total == 300
    assert dsm.build_plan("hh", "test", scale=0.1).total == 38


def test_unknown_model_rejected():
    with pytest.raises(dsm.PlanError):
        dsm.build_plan("ord2", "train")


def test_ord_plan_is_representable():
    plan = dsm.build_plan("ord", "train")
    assert plan.total == 3000
    assert plan.subsets[1].t_range == (2.0, 5.0)


# ---------------------------------------------------------------------------
# protocol sampling


def test_t0_subset_protocols_are_free_dynamics():
    plan = dsm.build_plan("fhn", "train", scale=0.1)
    protos = dsm.sample_protocols(plan, seed=3)
    t0 = [p for name, p in protos if name == "t0"]
    assert t0 and all(p.duration == 0.0 for p in t0)


def test_sampling_is_deterministic():
    plan = dsm.build_plan("hh", "val", scale=0.2)
    assert dsm.sample_protocols(plan, seed=9) == dsm.sample_protocols(plan, seed=9)
    assert dsm.sample_protocols(plan, seed=9) != dsm.sample_protocols(plan, seed=10)


def test_samples_respect_subset_ranges():
    plan = dsm.build_plan("hh", "train", scale=0.05)
    by_name = {s.name: s for s in plan.subsets}
    for name, proto in dsm.sample_protocols(plan, seed=1):
        sub = by_name[name]
        if sub.i_range is not None:
            assert sub.i_range[0] <= proto.amplitude <= sub.i_range[1]
        assert sub.t_range[0] <= proto.duration <= sub.t_range[1]


def test_splits_with_different_seeds_share_no_protocol():
    train = dsm.sample_protocols(dsm.build_plan("fhn", "train", scale=0.05), seed=100)
    val = dsm.sample_protocols(dsm.build_plan("fhn", "val", scale=0.05), seed=101)
    train_set = {(p.amplitude, p.duration) for n, p in train if n != "t0"}
    val_set = {(p.amplitude, p.duration) for n, p in val if n != "t0"}
    assert not train_set & val_set


# ---------------------------------------------------------------------------
# generation


@pytest.fixture(scope="module")
def small_fhn():
    plan = dsm.build_plan("fhn", "train", scale=0.02)
    return dsm.generate(plan, seed=7)


def test_generate_completes_without_solver_failures(small_fhn):
    assert len(small_fhn) == dsm.build_plan("fhn", "train", scale=0.02).total
    assert small_fhn.stats is not None


def test_t0_record_stays_at_equilibrium(small_fhn):
    rec = small_fhn.records[0]
    assert rec.subset == "t0"
    assert np.max(np.abs(rec.values)) <= 1e-8


def test_records_share_grid(small_fhn):
    assert small_fhn.n_points == 256
    assert small_fhn.t_final == 100.0
    for rec in small_fhn.records:
        assert rec.values.shape == (2, 256)


def test_generate_rejects_ord():
    plan = dsm.build_plan("ord", "train", scale=0.01)
    with pytest.raises(dsm.GenerationError, match="no built-in solver"):
        dsm.generate(plan, seed=1)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_maps_range_to_unit_interval():
    x = np.array([-12.0, 115.0, 51.5])
    out = dsm.normalize_channel(x, -12.0, 115.0)
    assert out[0] == 0.0 and out[1] == 1.0


def test_normalize_degenerate_range_gives_half():
    x = np.full(5, 3.3)
    assert np.all(dsm.normalize_channel(x, 3.3, 3.3) == 0.5)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_normalize_roundtrip_is_identity(seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((3, 16)) * r.uniform(0.1, 50)
    names = ("a", "b", "c")
    stats = {n: (float(x[i].min()), float(x[i].max())) for i, n in enumerate(names)}
    back = dsm.denormalize_values(dsm.normalize_values(x, names, stats), names, stats)
    np.testing.assert_allclose(back, x, atol=1e-12)


# ---------------------------------------------------------------------------
# save / load


def test_save_load_roundtrip_bitwise(small_fhn, tmp_path):
    p = dsm.save(small_fhn, tmp_path / "fhn-train.ds")
    loaded = dsm.load(p)
    assert loaded.model == small_fhn.model
    assert loaded.split == small_fhn.split
    assert loaded.channel_names == small_fhn.channel_names
    assert loaded.stats == small_fhn.stats
    assert len(loaded) == len(small_fhn)
    for a, b in zip(loaded.records, small_fhn.records):
        assert a.protocol == b.protocol
        assert a.subset == b.subset
        assert np.array_equal(a.values, b.values)


def test_corrupted_magic_fails_cleanly(small_fhn, tmp_path):
    p = dsm.save(small_fhn, tmp_path / "ds.bin")
    data = bytearray(p.read_bytes())
    data[0] ^= 0x01
    p.write_bytes(bytes(data))
    with pytest.raises(dsm.FormatError, match="magic"):
        dsm.load(p)


def test_truncated_payload_fails_cleanly(small_fhn, tmp_path):
    p = dsm.save(small_fhn, tmp_path / "ds.bin")
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 100])
    with pytest.raises(dsm.FormatError, match="truncated"):
        dsm.load(p)


def test_sidecar_count_mismatch_detected(small_fhn, tmp_path):
    import json

    p = dsm.save(small_fhn, tmp_path / "ds.bin")
    side = json.loads((tmp_path / "ds.bin.json").read_text())
    side["n_records"] = side["n_records"] + 1
    (tmp_path / "ds.bin.json").write_text(json.dumps(side))
    with pytest.raises(dsm.FormatError, match="record count"):
        dsm.load(p)


def test_save_is_deterministic(small_fhn, tmp_path):
    a = dsm.save(small_fhn, tmp_path / "a.ds")
    b = dsm.save(small_fhn, tmp_path / "b.ds")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.ds.json").read_text() == (tmp_path / "b.ds.json").read_text()


def test_export_csv(small_fhn, tmp_path):
    out = dsm.export_csv(small_fhn, 1, tmp_path / "rec.csv")
    lines = out.read_text().splitlines()
    assert lines[0] == "time,I_app,V,w"
    assert len(lines) == 1 + small_fhn.n_points


def test_stimulus_matrix_reconstruction(small_fhn):
    stim = small_fhn.stimulus_matrix()
    grid = small_fhn.grid
    for row, rec in zip(stim, small_fhn.records):
        expected = np.where(grid <= rec.protocol.duration, rec.protocol.amplitude, 0.0)
        assert np.array_equal(row, expected)
