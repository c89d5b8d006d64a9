import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcond import streams as sm
from fedcond.errors import InvalidInputError, ParseError


def hyper(**kw):
    base = dict(samples_per_round=50, total_rounds=20, seed=5, concept_seed=9)
    return sm.StreamSpec(**{**base, **kw})


def same(a, b):
    return np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_no_drift_plan_matches_bare_stream():
    spec = hyper()
    for r in (0, 7, 19):
        assert same(sm.next_batch(spec, None, r), sm.next_batch(spec, sm.DriftPlan("none"), r))
        assert same(sm.next_batch(spec, None, r), sm.rotating_hyperplane(r, spec))


def test_sudden_drift_corrupts_features_keeps_labels():
    spec = hyper(label_noise=0.1)
    plan = sm.DriftPlan("sudden", start_fraction=0.4)
    assert plan.start_round(20) == 8
    assert same(sm.next_batch(spec, plan, 7), sm.next_batch(spec, None, 7))
    for r in (8, 12, 19):
        hit, clean = sm.next_batch(spec, plan, r), sm.next_batch(spec, None, r)
        assert hit.features.min() >= 10 and hit.features.max() <= 1000
        assert np.array_equal(hit.labels, clean.labels)


def test_sudden_drift_with_duration_ends():
    plan = sm.DriftPlan("sudden", start_fraction=0.5, duration_rounds=2)
    assert [plan.sudden_active(r, 10) for r in range(4, 9)] == [False, True, True, False, False]


def test_gradual_drift_midpoint_mixing():
    spec = hyper(samples_per_round=1000, total_rounds=100)
    plan = sm.DriftPlan("gradual", start_fraction=0.2, duration_rounds=20)
    assert plan.old_concept_prob(30, 100) == pytest.approx(0.5)
    b = sm.next_batch(spec, plan, 30)
    new = (b.features @ sm._drifted_boundary(spec) > 0).astype(int)
    old = (b.features @ sm.boundary_vector(spec, 30) > 0).astype(int)
    differ = new != old
    # among samples where the two concepts disagree, the label reveals the concept
    frac_new = np.mean(b.labels[differ] == new[differ])
    assert abs(frac_new - 0.5) <= 0.1


def test_gradual_mixing_counted_directly():
    # the mixing draw is independent of the features; count it with the same key
    spec = hyper(samples_per_round=1000, total_rounds=100)
    plan = sm.DriftPlan("gradual", start_fraction=0.2, duration_rounds=20)
    mix = sm.keyed_rng(spec.seed, 30, sm._FEATURES, sm._MIX).random(1000) >= plan.old_concept_prob(30, 100)
    assert abs(mix.mean() - 0.5) <= 0.1


def test_round_out_of_range():
    spec = hyper()
    with pytest.raises(InvalidInputError):
        sm.next_batch(spec, None, 20)
    with pytest.raises(InvalidInputError):
        sm.next_batch(spec, None, -1)


def test_assign_drift_devices():
    assert len(sm.assign_drift_devices(20, 0.1, 3)) == 2
    assert sm.assign_drift_devices(20, 0.0, 3) == set()
    assert sm.assign_drift_devices(7, 1.0, 3) == set(range(7))
    assert sm.assign_drift_devices(20, 0.1, 3) == sm.assign_drift_devices(20, 0.1, 3)


def test_stationary_stream_has_one_concept():
    spec = hyper(rotation_rate=0.0)
    a0 = sm.boundary_vector(spec, 0)
    for r in (1, 10, 19):
        assert np.array_equal(sm.boundary_vector(spec, r), a0)
        b = sm.next_batch(spec, None, r)
        assert np.array_equal(b.labels, (b.features @ a0 > 0).astype(int))


def test_half_turn_reverses_boundary():
    T = 40
    spec = hyper(total_rounds=T, rotation_rate=math.pi / T)
    assert sm.boundary_vector(spec, 0) @ sm.boundary_vector(spec, T) == pytest.approx(-1.0)
    assert sm.boundary_vector(spec, 0) @ sm.boundary_vector(spec, T // 2) == pytest.approx(0.0, abs=1e-12)


def test_label_balance():
    spec = hyper(samples_per_round=10_000, total_rounds=1)
    assert abs(sm.next_batch(spec, None, 0).labels.mean() - 0.5) <= 0.05


def test_test_batch_ignores_corruption():
    spec = hyper()
    plan = sm.DriftPlan("sudden")
    t = sm.test_batch(spec, plan, 15, 100)
    assert np.abs(t.features).max() < 10
    assert same(t, sm.test_batch(spec, None, 15, 100))


def test_gaussian_clusters_learnable():
    spec = sm.StreamSpec("gaussian-clusters", 200, 5, seed=1, input_dim=3, num_classes=3, concept_seed=2)
    b = sm.next_batch(spec, None, 0)
    c = sm._cluster_centers(spec)
    nearest = np.argmin(((b.features[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == b.labels) > 0.6
    assert set(np.unique(b.labels)) <= {0, 1, 2}


# -- csv ---------------------------------------------------------------------

def write_csv(path, per_device, devices=(0, 1, 2), d=2, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["device_id," + ",".join(f"feature_{i}" for i in range(d)) + ",label"]
    for i in range(per_device):
        for k in devices:
            x = rng.standard_normal(d)
            lines.append(f"{k}," + ",".join(f"{v:.6f}" for v in x) + f",{int(x.sum() > 0)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_csv_split_and_rounds(tmp_path):
    p = write_csv(tmp_path / "d.csv", 100)
    specs = sm.load_csv(p, sm.CsvSchema(2, devices=(0, 1, 2)), samples_per_round=10)
    assert len(specs) == 3
    for s in specs:
        assert s.total_rounds >= 6
        n = len(s.data) + len(s.validation) + len(s.test)
        assert (len(s.data), len(s.validation), len(s.test), n) == (60, 20, 20, 100)
        assert len(sm.next_batch(s, None, 0)) == 10


def test_csv_reload_identical(tmp_path):
    p = write_csv(tmp_path / "d.csv", 30)
    a = sm.load_csv(p, sm.CsvSchema(2), 5)
    b = sm.load_csv(p, sm.CsvSchema(2), 5)
    for s, t in zip(a, b):
        for r in range(s.total_rounds):
            assert same(sm.next_batch(s, None, r), sm.next_batch(t, None, r))


def test_csv_device_without_rows(tmp_path):
    p = write_csv(tmp_path / "d.csv", 20, devices=(0, 2))
    with pytest.raises(ParseError, match="device 1 has no rows"):
        sm.load_csv(p, sm.CsvSchema(2, devices=(0, 1, 2)))


def test_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("device_id,feature_0,label\n0,1.0,1\n0,abc,0\n")
    with pytest.raises(ParseError, match="line 3.*feature_0"):
        sm.load_csv(p, sm.CsvSchema(1))
    p.write_text("device_id,feature_0\n0,1.0\n")
    with pytest.raises(ParseError, match="line 1.*label"):
        sm.load_csv(p, sm.CsvSchema(1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 19), st.sampled_from(["none", "sudden", "gradual"]))
def test_batches_are_deterministic(seed, r, kind):
    spec = hyper(seed=seed, label_noise=0.05, rotation_rate=0.01)
    plan = sm.DriftPlan(kind, 0.3, duration_rounds=5 if kind == "gradual" else None)
    assert same(sm.next_batch(spec, plan, r), sm.next_batch(spec, plan, r))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 19), st.floats(0.0, 1.0))
def test_sudden_drift_never_touches_labels(seed, r, start):
    spec = hyper(seed=seed, label_noise=0.2)
    plan = sm.DriftPlan("sudden", start)
    assert np.array_equal(sm.next_batch(spec, plan, r).labels, sm.next_batch(spec, None, r).labels)
