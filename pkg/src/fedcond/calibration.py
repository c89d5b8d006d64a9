"""Monte-Carlo studies of the drift detector in isolation.

Scores are batch error rates: each evaluation is the fraction of ``batch_size``
Bernoulli(p) errors, which is what a device sees when it scores a model on one
incoming batch.
"""

from __future__ import annotations

import numpy as np

from .drift import EvalQueue, detect, gamma_statistic, normal_sf, push
from .streams import keyed_rng


def _scores(rng, p, n, batch_size):
    return rng.binomial(batch_size, p, size=n) / batch_size


def false_positive_rate(evaluations=10_000, mean=0.3, batch_size=50, capacity=20, significance=0.05,
                        delta_mode="inverse-total", warmup=5, seed=0) -> float:
    """Fraction of tests that fire on a stationary score stream (tests during warm-up are not counted)."""
    q = EvalQueue(capacity)
    fired = tested = 0
    for s in _scores(keyed_rng(seed, 1), mean, evaluations, batch_size):
        if len(q) >= max(warmup, 1):
            tested += 1
            fired += detect(q, s, significance, delta_mode, warmup).drifted
        push(q, s)
    return fired / tested if tested else 0.0


def detection_power(trials=200, before=0.1, after=0.6, batch_size=50, capacity=20, within=2,
                    significance=0.05, delta_mode="inverse-total", seed=0) -> float:
    """Fraction of trials in which an abrupt shift is flagged within ``within`` evaluations of a full queue."""
    hits = 0
    for t in range(trials):
        rng = keyed_rng(seed, 2, t)
        q = EvalQueue(capacity)
        for s in _scores(rng, before, capacity, batch_size):
            push(q, s)
        for s in _scores(rng, after, within, batch_size):
            if detect(q, s, significance, delta_mode).drifted:
                hits += 1
                break
            push(q, s)
        # a miss falls through without counting
    return hits / trials


def literal_firing_points(a: int, grid: int = 200, significance: float = 0.05):
    """Grid points ``(mean_hist, new)`` in [0, 1]^2 where the literal-delta test would reject."""
    pts = np.linspace(0.0, 1.0, grid)
    fired = []
    for m in pts:
        for s in pts:
            if s <= m:
                continue
            res = gamma_statistic(float(m), float(s), a, "literal")
            if res is not None and normal_sf(res[0]) < significance:
                fired.append((float(m), float(s)))
    return fired
