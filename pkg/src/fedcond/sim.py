"""Deterministic discrete-event simulation of the federation.

Events are popped in ``(timestamp, sequence_no)`` order from one heap; every
random quantity is keyed by seeds, so a ``RunConfig`` fully determines the
record sequence.  Device computations run inline when their event is
processed, which is the reference (single-threaded) semantics.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass, field
from itertools import count

import numpy as np

from . import model as mc
from .client import DeviceState, LocalUpdate, client_round
from .config import SYNC_MODES, RunConfig
from .drift import AdaptationPolicy, EvalQueue
from .errors import ConfigError
from .latency import LatencyProfile, sample_latency
from .server import ServerState, aggregate, init_dispatch, model_bytes, select_next_device
from .streams import (NO_DRIFT, CsvSchema, DriftPlan, StreamSpec, assign_drift_devices, keyed_rng, load_csv,
                      test_batch)

DISPATCH, TRAIN_COMPLETE, UPLOAD_ARRIVE, SIM_END = "dispatch", "train_complete", "upload_arrive", "sim_end"


@dataclass
class SimEvent:
    timestamp: float
    sequence_no: int
    kind: str
    device_id: int | None = None
    payload: object = None

    def __lt__(self, other):
        return (self.timestamp, self.sequence_no) < (other.timestamp, other.sequence_no)


@dataclass
class RoundRecord:
    simulated_time: float
    event_index: int
    mode: str
    device_id: int | None
    scores: list
    mean_score: float
    variance: float
    drift_flags: list
    verdicts: list
    ledger: list
    uplink_bytes: int
    downlink_bytes: int
    lambdas: list

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Federation:
    """Everything a run needs, built once from the config."""

    cfg: RunConfig
    spec: mc.ModelSpec
    devices: list
    drift_devices: set
    latency: LatencyProfile
    init_model: np.ndarray
    model_bytes: int
    _tests: dict = field(default_factory=dict)

    def test_set(self, k: int):
        dev = self.devices[k]
        r = min(dev.round_index, max(dev.stream.total_rounds - 1, 0))
        # the test set only changes with the round if the concept can move
        static = dev.stream.rotation_rate == 0 and dev.plan.kind != "gradual"
        key = (k, 0 if static else r)
        if key not in self._tests:
            self._tests[key] = test_batch(dev.stream, dev.plan, r, self.cfg.test_size)
        return self._tests[key]


def build_federation(cfg: RunConfig) -> Federation:
    data_seed = cfg.derived_seed("data")
    K = cfg.num_devices
    if cfg.source == "csv-file":
        schema = CsvSchema(cfg.input_dim, "class" if cfg.is_classifier else "real", tuple(range(K)))
        streams = load_csv(cfg.csv_path, schema, cfg.samples_per_round)
    else:
        streams = [StreamSpec(source=cfg.source, samples_per_round=cfg.samples_per_round,
                              total_rounds=cfg.total_rounds,
                              seed=int(np.random.SeedSequence([data_seed, k]).generate_state(1, np.uint64)[0]),
                              input_dim=cfg.input_dim, num_classes=cfg.num_classes, concept_seed=data_seed,
                              rotation_rate=cfg.rotation_rate, label_noise=cfg.label_noise,
                              growth_rate=cfg.growth_rate)
                   for k in range(K)]
    drifting = assign_drift_devices(K, cfg.drift_fraction, data_seed) if cfg.drift_kind != "none" else set()
    plan = DriftPlan(kind=cfg.drift_kind, start_fraction=cfg.drift_start,
                     duration_rounds=cfg.drift_duration or None,
                     corrupt_low=cfg.corrupt_low, corrupt_high=cfg.corrupt_high)

    if cfg.model == "mlp-1-hidden":
        out_dim = cfg.num_classes if cfg.is_classifier else 1
    elif cfg.model == "logistic-classification":
        out_dim = 1 if cfg.num_classes == 2 else cfg.num_classes
    else:
        out_dim = 1
    spec = mc.ModelSpec(cfg.model, cfg.input_dim, out_dim, cfg.hidden_dim,
                        "classification" if cfg.is_classifier else "regression")
    mc.check_loss(spec, cfg.resolved_loss)

    if cfg.mode == "fedcond":
        policy = AdaptationPolicy(cfg.lambda_initial, cfg.escalation_factor, cfg.lambda_max, cfg.decay_factor,
                                  cfg.lambda_direction, min(cfg.lambda_min, cfg.lambda_initial))
        lam0 = cfg.lambda_initial
    else:
        lam0 = {"fedavg": 0.0, "fedprox": cfg.mu}.get(cfg.mode, cfg.lambda_initial)
        policy = AdaptationPolicy(max(lam0, 1e-12), 2.0, max(lam0, 1e-12))
    detection = cfg.mode == "fedcond" and cfg.detection
    devices = [DeviceState(device_id=k, spec=spec, stream=s, plan=plan if k in drifting else NO_DRIFT,
                           policy=policy, loss=cfg.resolved_loss, metric=cfg.resolved_metric, lam=lam0,
                           lr=cfg.learning_rate, local_epochs=cfg.local_epochs, batch_size=cfg.batch_size,
                           buffer_window=cfg.buffer_window, prox_rule=cfg.prox_rule, detection=detection,
                           significance=cfg.significance, delta_mode=cfg.delta_mode, warmup=cfg.warmup,
                           exclude_drifted_scores=cfg.exclude_drifted_scores,
                           queue=EvalQueue(cfg.queue_capacity))
               for k, s in enumerate(streams)]
    latency = LatencyProfile.build(K, cfg.compute_median, cfg.slow_devices, cfg.slow_factor,
                                   compute_sigma=cfg.compute_sigma, uplink_median=cfg.uplink_median,
                                   uplink_sigma=cfg.uplink_sigma, downlink_median=cfg.downlink_median,
                                   downlink_sigma=cfg.downlink_sigma, seed=cfg.derived_seed("latency"))
    init = mc.init_params(spec, keyed_rng(data_seed, 11))
    return Federation(cfg, spec, devices, drifting, latency, init, model_bytes(spec, cfg.scalar_bytes))


def _evaluate_all(fed: Federation, w: np.ndarray) -> list[float]:
    return [mc.evaluate(fed.spec, w, fed.test_set(k), fed.cfg.resolved_metric) for k in range(len(fed.devices))]


def _record(fed, t, index, device, w, server_like, verdicts, uplink, downlink) -> RoundRecord:
    scores = _evaluate_all(fed, w)
    arr = np.asarray(scores)
    return RoundRecord(
        simulated_time=float(t), event_index=index, mode=fed.cfg.mode, device_id=device,
        scores=scores, mean_score=float(arr.mean()), variance=float(arr.var()),
        drift_flags=[v["device_id"] for v in verdicts if v["drifted"]], verdicts=verdicts,
        ledger=[int(server_like[k]) for k in range(len(fed.devices))],
        uplink_bytes=int(uplink), downlink_bytes=int(downlink),
        lambdas=[float(d.lam) for d in fed.devices],
    )


def _verdict_dict(k, round_index, v) -> dict:
    return {"device_id": k, "round": round_index, "statistic": float(v.statistic),
            "p_value": float(v.p_value), "drifted": bool(v.drifted)}


@dataclass
class SimOutcome:
    records: list
    federation: Federation
    ledger: list
    uplink_bytes: int
    downlink_bytes: int
    dispatches: int
    global_model: np.ndarray | None = None


def run(cfg: RunConfig, trace: list | None = None) -> list[RoundRecord]:
    """Simulate ``cfg.mode`` and return one record per aggregation (or per round for sync modes).

    If ``trace`` is a list, ``(time, kind, device_id)`` tuples of processed
    events are appended to it.
    """
    return simulate(cfg, trace).records


def simulate(cfg: RunConfig, trace: list | None = None) -> SimOutcome:
    if cfg.mode in SYNC_MODES:
        return _sync(cfg, trace)
    fed = build_federation(cfg)
    K = len(fed.devices)
    broadcast = cfg.mode == "async-broadcast"
    server = ServerState(fed.init_model, K, 1.0 if broadcast else cfg.gamma, fed.model_bytes,
                         max_lead=None if (broadcast or cfg.max_update_lead < 0) else cfg.max_update_lead,
                         fixed_total_samples=cfg.fixed_total_samples or None,
                         staleness_exponent=cfg.staleness_exponent)
    seq = count(1)
    heap: list[SimEvent] = [SimEvent(cfg.sim_duration, 0, SIM_END)]
    pending_verdicts: dict[int, dict] = {}

    def dispatch(k, t):
        heapq.heappush(heap, SimEvent(t, next(seq), DISPATCH, k, server.global_model.copy()))

    def idle():
        for k, dev in enumerate(fed.devices):
            if dev.exhausted and k not in server.finished:
                server.finished.add(k)
        return [k for k in range(K) if k not in server.active and k not in server.finished]

    def refill(t):
        if broadcast:
            for k in idle():
                server.active.add(k)
                server.dispatches += 1
                dispatch(k, t)
        else:
            while (k := select_next_device(server, idle())) is not None:
                dispatch(k, t)

    if broadcast:
        # the seed-derived starting model is not charged as traffic
        refill(0.0)
    else:
        idle()
        for k in init_dispatch(server, [k for k in range(K) if k not in server.finished]):
            dispatch(k, 0.0)

    records: list[RoundRecord] = []
    now = 0.0
    cap = server.cap
    while heap:
        ev = heapq.heappop(heap)
        assert ev.timestamp >= now, "simulated clock went backwards"
        now = ev.timestamp
        if trace is not None:
            trace.append((now, ev.kind, ev.device_id))
        if ev.kind == SIM_END:
            break
        k = ev.device_id
        dev = fed.devices[k]
        if ev.kind == DISPATCH:
            compute, up, down = sample_latency(fed.latency, k, dev.round_index)
            heapq.heappush(heap, SimEvent(now + down + compute, next(seq), TRAIN_COMPLETE, k, (ev.payload, up)))
        elif ev.kind == TRAIN_COMPLETE:
            global_model, up = ev.payload
            r = dev.round_index
            update, verdict, _ = client_round(dev, global_model)
            if update is None:
                server.active.discard(k)
                refill(now)
                continue
            pending_verdicts[k] = _verdict_dict(k, r, verdict)
            heapq.heappush(heap, SimEvent(now + up, next(seq), UPLOAD_ARRIVE, k, update))
        elif ev.kind == UPLOAD_ARRIVE:
            update: LocalUpdate = ev.payload
            update.round_stamp = now
            result = aggregate(server, update)
            verdict = pending_verdicts.pop(k)
            if result is not None:
                if broadcast:
                    # every aggregation is pushed to all K devices, busy or not
                    server.downlink_bytes += K * fed.model_bytes
                records.append(_record(fed, now, len(records), k, server.global_model, server.ledger, [verdict],
                                       server.uplink_bytes, server.downlink_bytes))
            elif broadcast and not dev.exhausted:
                # nothing changed; only the sender needs the model again
                server.downlink_bytes += fed.model_bytes
            refill(now)
        if not broadcast:
            assert len(server.active) <= cap, "concurrency cap exceeded"
    return SimOutcome(records, fed, [server.ledger[k] for k in range(K)], server.uplink_bytes,
                      server.downlink_bytes, server.dispatches, server.global_model.copy())


def run_sync_baseline(cfg: RunConfig, mode: str | None = None, trace: list | None = None) -> list[RoundRecord]:
    """Synchronous rounds: sample a fraction of devices, train from the global model, average by sample count.

    A round lasts as long as its slowest participant.
    """
    mode = mode or cfg.mode
    if mode not in SYNC_MODES:
        raise ConfigError(f"{mode!r} is not a synchronous mode")
    if cfg.mode != mode:
        cfg = cfg.replace(mode=mode)
    return _sync(cfg, trace).records


def _sync(cfg: RunConfig, trace) -> SimOutcome:
    fed = build_federation(cfg)
    K = len(fed.devices)
    m = max(1, math.ceil(cfg.participation * K - 1e-9))
    sampling_seed = cfg.derived_seed("sampling")
    w = fed.init_model.copy()
    ledger = [0] * K
    uplink = downlink = 0
    t = 0.0
    records: list[RoundRecord] = []
    for rnd in count():
        live = [k for k, d in enumerate(fed.devices) if not d.exhausted]
        if not live:
            break
        chosen = sorted(int(k) for k in keyed_rng(sampling_seed, rnd).choice(live, size=min(m, len(live)), replace=False))
        duration = max(sum(sample_latency(fed.latency, k, fed.devices[k].round_index)) for k in chosen)
        if t + duration > cfg.sim_duration:
            break
        if trace is not None:
            trace.extend((t, DISPATCH, k) for k in chosen)
        updates, verdicts = [], []
        for k in chosen:
            r = fed.devices[k].round_index
            update, verdict, _ = client_round(fed.devices[k], w)
            updates.append(update)
            verdicts.append(_verdict_dict(k, r, verdict))
            ledger[k] += 1
        n = np.array([u.sample_count for u in updates], dtype=float)
        w = np.sum([ni * u.trained_model for ni, u in zip(n, updates)], axis=0) / n.sum()
        uplink += len(chosen) * fed.model_bytes
        downlink += len(chosen) * fed.model_bytes
        t += duration
        if trace is not None:
            trace.extend((t, UPLOAD_ARRIVE, k) for k in chosen)
        records.append(_record(fed, t, len(records), None, w, ledger, verdicts, uplink, downlink))
    return SimOutcome(records, fed, ledger, uplink, downlink, sum(ledger), w)
