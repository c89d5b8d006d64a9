"""Asynchronous aggregation, the update-count ledger, and dispatch scheduling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProtocolError
from .model import ModelSpec

log = logging.getLogger(__name__)


def model_bytes(spec: ModelSpec, scalar_bytes: int = 4) -> int:
    return spec.num_params * scalar_bytes


def concurrency_cap(gamma: float, num_devices: int) -> int:
    # the epsilon keeps e.g. 0.7 * 10 from rounding up to 8
    return max(1, math.ceil(gamma * num_devices - 1e-9))


@dataclass
class AggregationResult:
    new_global: np.ndarray
    applied_weight: float
    source_device: int


@dataclass
class ServerState:
    global_model: np.ndarray
    num_devices: int
    gamma: float = 0.2
    model_bytes: int = 0
    ledger: dict = field(default_factory=dict)
    active: set = field(default_factory=set)
    finished: set = field(default_factory=set)
    reported: dict = field(default_factory=dict)  # latest n_k per device
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    round_counter: int = 0
    dispatches: int = 0
    # None disables the fairness gate, leaving plain fewest-updates selection
    max_lead: int | None = 1
    fixed_total_samples: int | None = None
    staleness_exponent: float = 0.0
    dispatched_at: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.num_devices < 1:
            raise ConfigError("need at least one device")
        self.global_model = np.array(self.global_model, dtype=float)
        for k in range(self.num_devices):
            self.ledger.setdefault(k, 0)

    @property
    def cap(self) -> int:
        return concurrency_cap(self.gamma, self.num_devices)

    @property
    def total_samples(self) -> int:
        if self.fixed_total_samples:
            return self.fixed_total_samples
        return sum(self.reported.values())


def aggregate(state: ServerState, update) -> AggregationResult | None:
    """Fold one device's update into the global model.

    ``w <- w - (n_k / N) * (base - trained)`` with N the sum of the latest
    sample counts reported by every device.  A non-finite update is dropped
    (the device's slot is still freed); the result is then None.
    """
    d = update.device_id
    w = state.global_model
    if update.trained_model.shape != w.shape or update.base_model.shape != w.shape:
        raise ProtocolError(f"update from device {d} has shape {update.trained_model.shape}, model is {w.shape}")
    if update.sample_count < 1:
        raise ProtocolError(f"update from device {d} reports {update.sample_count} samples")
    state.active.discard(d)
    if not (np.all(np.isfinite(update.trained_model)) and np.all(np.isfinite(update.base_model))):
        log.warning("rejected non-finite update from device %s", d)
        return None
    state.reported[d] = update.sample_count
    weight = update.sample_count / state.total_samples
    if state.staleness_exponent:
        staleness = state.round_counter - state.dispatched_at.get(d, state.round_counter)
        weight *= (1.0 + staleness) ** -state.staleness_exponent
    state.global_model = w - weight * (update.base_model - update.trained_model)
    state.ledger[d] += 1
    state.round_counter += 1
    state.uplink_bytes += state.model_bytes
    return AggregationResult(state.global_model, weight, d)


def _eligible(state: ServerState, device: int) -> bool:
    if state.max_lead is None:
        return True
    live = [c for k, c in state.ledger.items() if k not in state.finished]
    return not live or state.ledger[device] <= min(live) + state.max_lead


def select_next_device(state: ServerState, idle_devices) -> int | None:
    """Pick the idle device with the fewest updates (lowest id on ties) and mark it active.

    Returns None when nothing is idle, the concurrency cap is reached, or the
    candidate is already ``max_lead`` updates ahead of the slowest live device.
    """
    idle = [k for k in idle_devices if k not in state.active and k not in state.finished]
    if not idle or len(state.active) >= state.cap:
        return None
    best = min(idle, key=lambda k: (state.ledger[k], k))
    if not _eligible(state, best):
        return None
    state.active.add(best)
    state.downlink_bytes += state.model_bytes
    state.dispatches += 1
    state.dispatched_at[best] = state.round_counter
    return best


def init_dispatch(state: ServerState, all_devices) -> list[int]:
    if state.round_counter or any(state.ledger.values()):
        raise ConfigError("init_dispatch needs a fresh server state")
    chosen = []
    while (k := select_next_device(state, all_devices)) is not None:
        chosen.append(k)
    return chosen
