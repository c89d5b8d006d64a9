"""One device's learning loop: evaluate, detect, adapt λ, train, upload."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model as mc
from .drift import AdaptationPolicy, DriftVerdict, EvalQueue, adapt_lambda, detect, push
from .errors import InvalidInputError
from .streams import DriftPlan, StreamBatch, StreamSpec, keyed_rng, next_batch

log = logging.getLogger(__name__)

PROX_RULES = ("proximal", "gradient")
DIVERGENCE_LOSS = 1e6


@dataclass
class LocalUpdate:
    device_id: int
    trained_model: np.ndarray
    base_model: np.ndarray
    sample_count: int
    round_stamp: float = 0.0


def proximal_objective(spec, loss, w, w_global, lam, batch) -> tuple[float, np.ndarray]:
    """Local loss plus ``lam/2 * ||w - w_global||^2`` and its gradient."""
    f, g = mc.loss_and_gradient(spec, loss, w, batch)
    diff = w - w_global
    return f + 0.5 * lam * float(diff @ diff), g + lam * diff


def local_train(spec, loss, w_start, w_global, lam, buffer: StreamBatch, lr, epochs,
                batch_size: int = 0, rule: str = "proximal", rng: np.random.Generator | None = None) -> np.ndarray:
    """Run ``epochs`` passes of gradient steps on the proximal local objective.

    ``rule="gradient"`` takes the plain step ``w -= lr * (grad_f + lam * (w - w_global))``.
    ``rule="proximal"`` handles the quadratic penalty in closed form,
    ``w = (w - lr * grad_f + lr * lam * w_global) / (1 + lr * lam)``, which has the
    same fixed points but stays stable for any ``lr * lam``.  ``batch_size=0``
    means one full-batch step per epoch.
    """
    n = len(buffer)
    if n == 0:
        raise InvalidInputError("local_train needs a non-empty buffer")
    if lr <= 0:
        raise InvalidInputError("learning rate must be positive")
    if rule not in PROX_RULES:
        raise InvalidInputError(f"unknown prox rule {rule!r}")
    w = np.array(w_start, dtype=float)
    shrink = 1.0 + lr * lam
    for _ in range(epochs):
        if batch_size and batch_size < n:
            order = (rng or np.random.default_rng(0)).permutation(n)
            chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
        else:
            chunks = [None]
        for idx in chunks:
            b = buffer if idx is None else StreamBatch(buffer.features[idx], buffer.labels[idx])
            f, g = mc.loss_and_gradient(spec, loss, w, b)
            if not np.isfinite(f) or f > DIVERGENCE_LOSS:
                log.warning("local training diverged (loss %.3g); keeping the starting model", f)
                return np.array(w_start, dtype=float)
            if rule == "proximal":
                w = (w - lr * g + (lr * lam) * w_global) / shrink
            else:
                w = w - lr * (g + lam * (w - w_global))
            if not np.all(np.isfinite(w)):
                log.warning("local training produced non-finite parameters; keeping the starting model")
                return np.array(w_start, dtype=float)
    return w


@dataclass
class DeviceState:
    device_id: int
    spec: mc.ModelSpec
    stream: StreamSpec
    plan: DriftPlan
    policy: AdaptationPolicy
    loss: str = "cross-entropy"
    metric: str = "error-rate"
    lam: float = 0.1
    lr: float = 0.05
    local_epochs: int = 2
    batch_size: int = 0
    buffer_window: int = 0  # rounds kept for training; 0 keeps everything
    prox_rule: str = "proximal"
    detection: bool = True
    significance: float = 0.05
    delta_mode: str = "inverse-total"
    warmup: int = 5
    exclude_drifted_scores: bool = False
    queue: EvalQueue = field(default_factory=EvalQueue)
    local_model: np.ndarray | None = None
    received_global: np.ndarray | None = None
    round_index: int = 0
    sample_count: int = 0
    update_count: int = 0
    buffer: StreamBatch | None = None
    _chunks: list = field(default_factory=list, repr=False)

    @property
    def exhausted(self) -> bool:
        return self.round_index >= self.stream.total_rounds

    def _append(self, batch: StreamBatch) -> None:
        self._chunks.append(batch)
        if self.buffer_window and len(self._chunks) > self.buffer_window:
            self._chunks.pop(0)
        if self.buffer is None or self.buffer_window:
            self.buffer = StreamBatch(np.concatenate([c.features for c in self._chunks]),
                                      np.concatenate([c.labels for c in self._chunks]))
        else:
            self.buffer = StreamBatch(np.concatenate([self.buffer.features, batch.features]),
                                      np.concatenate([self.buffer.labels, batch.labels]))
        self.sample_count += len(batch)


def client_round(state: DeviceState, global_model: np.ndarray):
    """Advance ``state`` by one round.

    Returns ``(update, verdict, state)``; ``update`` and ``verdict`` are None
    when the stream has no rounds left.  The new batch is scored with the
    received global model before it is used for training.
    """
    if state.exhausted:
        return None, None, state
    r = state.round_index
    state.received_global = np.array(global_model, dtype=float)
    batch = next_batch(state.stream, state.plan, r)
    score = mc.evaluate(state.spec, state.received_global, batch, state.metric)
    if state.detection:
        verdict = detect(state.queue, score, state.significance, state.delta_mode, state.warmup)
        state.lam = adapt_lambda(state.lam, verdict, state.policy)
    else:
        verdict = DriftVerdict(False)
    if not (state.exclude_drifted_scores and verdict.drifted):
        push(state.queue, score)
    state._append(batch)
    rng = keyed_rng(state.stream.seed, r, 99) if state.batch_size else None
    state.local_model = local_train(state.spec, state.loss, state.received_global, state.received_global,
                                    state.lam, state.buffer, state.lr, state.local_epochs,
                                    state.batch_size, state.prox_rule, rng)
    state.round_index += 1
    state.update_count += 1
    update = LocalUpdate(state.device_id, state.local_model.copy(), state.received_global.copy(), state.sample_count)
    return update, verdict, state
