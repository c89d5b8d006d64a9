"""Local drift detection on the bounded history of evaluation scores.

The detector compares the newest score against the mean of the stored history
with a continuity-corrected two-proportion statistic

    stat = (|mean_hist - new| - 0.5 * delta) / sqrt(pooled * (1 - pooled) * delta)

and converts it to a one-sided p-value with the standard normal survival
function.  Scores are oriented larger-is-worse, so only a rise can flag drift.

``delta`` has two readings:

* ``"inverse-total"`` (default): ``delta = 1 / (a + 1)``.
* ``"literal"``: ``delta = 1 / a + 1``.  The continuity correction alone is then
  at least 0.5, so for scores in [0, 1] the test almost never rejects.  Up to
  ``a = 11`` it cannot reject at all at the 0.05 level (the best case, a
  history of zeros followed by a 1, gives p = 0.058 at ``a = 11``).  With
  ``a = 20`` it rejects only when the history mean is below about 0.029 and
  the new score is above about 0.86.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidInputError

DELTA_MODES = ("inverse-total", "literal")


def normal_sf(x: float) -> float:
    """Upper tail of the standard normal, ``1 - Phi(x)``, via ``erfc`` (no cancellation for large x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def delta_for(a: int, mode: str) -> float:
    if mode == "inverse-total":
        return 1.0 / (a + 1)
    if mode == "literal":
        return 1.0 / a + 1.0
    raise ConfigError(f"unknown delta_mode {mode!r}")


@dataclass
class EvalQueue:
    capacity: int = 20
    scores: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("queue capacity must be positive")
        self.scores = deque(self.scores, maxlen=self.capacity)

    def __len__(self):
        return len(self.scores)

    def mean(self) -> float:
        return sum(self.scores) / len(self.scores)


def push(queue: EvalQueue, score: float) -> EvalQueue:
    if not math.isfinite(score):
        raise InvalidInputError(f"non-finite score {score!r}")
    queue.scores.append(float(score))
    return queue


@dataclass(frozen=True)
class DriftVerdict:
    drifted: bool
    statistic: float = 0.0
    p_value: float = 1.0
    mean_history: float = 0.0
    pooled_mean: float = 0.0


def gamma_statistic(mean_hist: float, new: float, a: int, mode: str = "inverse-total") -> tuple[float, float] | None:
    """Return ``(statistic, pooled_mean)``, or None when the pooled variance is zero."""
    d = delta_for(a, mode)
    pooled = (a * mean_hist + new) / (a + 1)
    var = pooled * (1.0 - pooled) * d
    if var <= 0.0:
        return None
    return (abs(mean_hist - new) - 0.5 * d) / math.sqrt(var), pooled


def detect(queue: EvalQueue, new_score: float, significance: float = 0.05,
           delta_mode: str = "inverse-total", warmup: int = 5) -> DriftVerdict:
    a = len(queue)
    if a == 0 or a < warmup:
        return DriftVerdict(False)
    mean_hist = queue.mean()
    res = gamma_statistic(mean_hist, new_score, a, delta_mode)
    if res is None:
        # constant pooled proportion: the test has nothing to say
        return DriftVerdict(False, 0.0, 1.0, mean_hist, (a * mean_hist + new_score) / (a + 1))
    stat, pooled = res
    p = normal_sf(stat)
    drifted = new_score > mean_hist and p < significance
    return DriftVerdict(drifted, stat, p, mean_hist, pooled)


@dataclass(frozen=True)
class AdaptationPolicy:
    """How the proximal weight reacts to a drift verdict.

    ``direction="decrease"`` exists for the ablation that divides instead of
    multiplies; λ then lives in ``[lambda_min, lambda_initial]``.
    """

    lambda_initial: float = 0.1
    escalation_factor: float = 2.0
    lambda_max: float = 1000.0
    decay_factor: float = 1.0
    direction: str = "increase"
    lambda_min: float = 1e-4

    def __post_init__(self):
        if self.lambda_initial <= 0 or self.lambda_max < self.lambda_initial:
            raise ConfigError("need 0 < lambda_initial <= lambda_max")
        if self.escalation_factor <= 1:
            raise ConfigError("escalation_factor must exceed 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must be in (0, 1]")
        if self.direction not in ("increase", "decrease"):
            raise ConfigError(f"unknown lambda direction {self.direction!r}")
        if self.direction == "decrease" and not 0 < self.lambda_min <= self.lambda_initial:
            raise ConfigError("need 0 < lambda_min <= lambda_initial")

    @property
    def bounds(self) -> tuple[float, float]:
        if self.direction == "increase":
            return self.lambda_initial, self.lambda_max
        return self.lambda_min, self.lambda_initial


def adapt_lambda(current: float, verdict: DriftVerdict, policy: AdaptationPolicy) -> float:
    lo, hi = policy.bounds
    if policy.direction == "increase":
        if verdict.drifted:
            return min(current * policy.escalation_factor, hi)
        return max(current * policy.decay_factor, lo)
    if verdict.drifted:
        return max(current / policy.escalation_factor, lo)
    return min(current / policy.decay_factor, hi)
