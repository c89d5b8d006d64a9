"""Named experiment scenarios shared by the acceptance suite and the scripts."""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .report import drift_onset_time, recovery_analysis
from .sim import simulate

# Sudden drift on 10% of 20 devices at 40% of a 100-round stream.  Label noise
# of 0.1 sets the error floor; escalation by 4 from lambda 1 caps the damage the
# first corrupted updates can do before the penalty takes hold.
DRIFT = dict(num_devices=20, model="logistic-classification", source="rotating-hyperplane",
             drift_kind="sudden", drift_fraction=0.1, drift_start=0.4, total_rounds=100,
             label_noise=0.1, lambda_initial=1.0, escalation_factor=4.0, lambda_max=1e6,
             sim_duration=1e5)

# Long streams and a short training window so no device runs dry inside 2000 s.
FAIRNESS = dict(num_devices=20, gamma=0.2, sim_duration=2000.0, total_rounds=3000,
                samples_per_round=10, buffer_window=100, test_size=50)

HOMOGENEOUS = dict(compute_sigma=0.0, uplink_sigma=0.0, downlink_sigma=0.0)
STRAGGLER = dict(slow_devices=[0], slow_factor=10.0)


def drift_config(seed: int, **overrides) -> RunConfig:
    return RunConfig(seed=seed, **{**DRIFT, **overrides})


def fairness_config(seed: int, heterogeneous: bool = True, **overrides) -> RunConfig:
    extra = STRAGGLER if heterogeneous else HOMOGENEOUS
    return RunConfig(seed=seed, **{**FAIRNESS, **extra, **overrides})


@dataclass
class DriftRun:
    mode: str
    final_score: float
    recovered: bool
    pre_level: float
    peak: float
    recovery_delay: float | None


def drift_run(cfg: RunConfig) -> DriftRun:
    out = simulate(cfg)
    fed = out.federation
    start = fed.devices[0].plan.start_round(cfg.total_rounds)
    onset = drift_onset_time(out.records, fed.drift_devices, start)
    if onset is None:
        raise RuntimeError("no drifted update reached the server")
    rec = recovery_analysis(out.records, onset)
    return DriftRun(cfg.mode, out.records[-1].mean_score, rec.recovered, rec.pre_level, rec.peak, rec.recovery_delay)
