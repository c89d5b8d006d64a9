import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from fedcond.drift import (AdaptationPolicy, DriftVerdict, EvalQueue, adapt_lambda, delta_for, detect,
                           gamma_statistic, normal_sf, push)
from fedcond.errors import ConfigError, InvalidInputError

# frozen from an independent scipy evaluation of the statistic
FULL_QUEUE = dict(pooled=0.12380952380952381, stat=6.625429878146332, p=1.731195339460002e-11)
HALF_QUEUE = dict(pooled=0.20909090909090908, stat=0.4448607079471755, p=0.32821020965282355)


def queue_of(values, capacity=20):
    q = EvalQueue(capacity)
    for v in values:
        push(q, v)
    return q


def test_normal_sf_matches_scipy():
    for x in np.linspace(-8, 12, 81):
        assert normal_sf(x) == pytest.approx(norm.sf(x), rel=1e-12, abs=1e-300)


def test_full_queue_shift_flags_drift():
    v = detect(queue_of([0.10] * 20), 0.60)
    assert v.drifted
    assert v.pooled_mean == pytest.approx(FULL_QUEUE["pooled"], rel=1e-12)
    assert v.statistic == pytest.approx(FULL_QUEUE["stat"], rel=1e-12)
    assert v.p_value == pytest.approx(FULL_QUEUE["p"], rel=1e-9)


def test_small_shift_is_not_drift():
    v = detect(queue_of([0.20] * 10), 0.30)
    assert not v.drifted
    assert v.statistic == pytest.approx(HALF_QUEUE["stat"], rel=1e-12)
    assert v.p_value == pytest.approx(HALF_QUEUE["p"], rel=1e-9)


def test_identical_score_fails_gate():
    assert not detect(queue_of([0.5] * 20), 0.5).drifted


def test_improvement_never_flags():
    v = detect(queue_of([0.9] * 20), 0.0)
    assert v.p_value < 1e-6 and not v.drifted


def test_warmup_and_empty_queue():
    assert detect(EvalQueue(), 0.9) == DriftVerdict(False)
    assert not detect(queue_of([0.0] * 4), 1.0).drifted
    assert detect(queue_of([0.0] * 4), 1.0, warmup=4).drifted


def test_degenerate_pool_returns_p_one():
    v = detect(queue_of([0.0] * 10), 0.0)
    assert (v.drifted, v.p_value) == (False, 1.0)
    assert gamma_statistic(1.0, 1.0, 10) is None


def test_delta_modes():
    assert delta_for(20, "inverse-total") == pytest.approx(1 / 21)
    assert delta_for(20, "literal") == pytest.approx(1.05)
    with pytest.raises(ConfigError):
        delta_for(3, "other")


def test_push_fifo():
    q = queue_of(range(1, 26))
    assert list(q.scores) == list(range(6, 26))
    full = queue_of([0.1] * 20)
    push(full, 0.7)
    assert len(full) == 20 and full.scores[-1] == 0.7
    assert len(push(EvalQueue(), 0.3)) == 1


def test_push_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        push(EvalQueue(), float("nan"))
    with pytest.raises(InvalidInputError):
        push(EvalQueue(), math.inf)


def test_adapt_examples():
    pol = AdaptationPolicy(0.1, 2.0, 10.0)
    hit, miss = DriftVerdict(True), DriftVerdict(False)
    assert adapt_lambda(0.1, hit, pol) == pytest.approx(0.2)
    assert adapt_lambda(8.0, hit, pol) == 10.0
    assert adapt_lambda(0.2, miss, pol) == 0.2


def test_adapt_decay_floors_at_initial():
    pol = AdaptationPolicy(0.1, 2.0, 10.0, decay_factor=0.5)
    assert adapt_lambda(0.4, DriftVerdict(False), pol) == 0.2
    assert adapt_lambda(0.15, DriftVerdict(False), pol) == 0.1


def test_decrease_direction():
    pol = AdaptationPolicy(1.0, 4.0, 1.0, direction="decrease", lambda_min=0.01)
    assert adapt_lambda(1.0, DriftVerdict(True), pol) == 0.25
    assert adapt_lambda(0.02, DriftVerdict(True), pol) == 0.01
    assert adapt_lambda(0.25, DriftVerdict(False), pol) == 0.25


def test_policy_validation():
    with pytest.raises(ConfigError):
        AdaptationPolicy(escalation_factor=1.0)
    with pytest.raises(ConfigError):
        AdaptationPolicy(lambda_initial=5.0, lambda_max=1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=5, max_size=20), st.sampled_from(["inverse-total", "literal"]))
def test_no_flip_back_as_new_score_grows(hist, mode):
    q = queue_of(hist)
    flags = [detect(q, s, delta_mode=mode).drifted for s in np.linspace(0, 1, 201)]
    first = flags.index(True) if True in flags else len(flags)
    assert all(flags[first:])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=5, max_size=20), st.floats(0.0, 1.0))
def test_verdict_consistency(hist, new):
    v = detect(queue_of(hist), new)
    assert 0.0 <= v.p_value <= 1.0
    if v.drifted:
        assert v.p_value < 0.05 and new > v.mean_history
        assert v.p_value == pytest.approx(norm.sf(v.statistic), rel=1e-9, abs=1e-300)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.booleans(), max_size=40), st.floats(1.1, 8.0), st.floats(0.1, 1.0))
def test_lambda_stays_in_bounds(hits, rho, decay):
    pol = AdaptationPolicy(0.1, rho, 10.0, decay)
    lam = pol.lambda_initial
    for h in hits:
        lam = adapt_lambda(lam, DriftVerdict(h), pol)
        assert pol.lambda_initial <= lam <= pol.lambda_max
