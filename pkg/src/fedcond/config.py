"""Run configuration: a flat TOML file of ``key = value`` lines.

Omitted keys take the defaults below.  Unknown keys, wrong types and
out-of-range values are rejected with the key name and its line number.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field, fields

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

log = logging.getLogger(__name__)

MODES = ("fedcond", "async-broadcast", "fedavg", "fedprox")
SYNC_MODES = ("fedavg", "fedprox")


def _env_seed() -> int:
    raw = os.environ.get("FEDCOND_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FEDCOND_SEED must be an integer, got {raw!r}") from None


@dataclass
class RunConfig:
    mode: str = "fedcond"
    num_devices: int = 20
    gamma: float = 0.2
    # drift handling
    detection: bool = True
    lambda_initial: float = 0.1
    escalation_factor: float = 2.0
    lambda_max: float = 1000.0
    decay_factor: float = 1.0
    lambda_direction: str = "increase"
    lambda_min: float = 1e-4
    significance: float = 0.05
    queue_capacity: int = 20
    warmup: int = 5
    delta_mode: str = "inverse-total"
    delta_threshold: float = 0.0  # accepted and recorded; has no effect
    exclude_drifted_scores: bool = False
    # drift injection
    drift_fraction: float = 0.1
    drift_kind: str = "sudden"
    drift_start: float = 0.4
    drift_duration: int = 0  # 0: sudden drift lasts until the end of the stream
    corrupt_low: float = 10.0
    corrupt_high: float = 1000.0
    # data
    source: str = "rotating-hyperplane"
    csv_path: str = ""
    samples_per_round: int = 50
    total_rounds: int = 100
    input_dim: int = 5
    num_classes: int = 2
    rotation_rate: float = 0.0
    label_noise: float = 0.05
    growth_rate: float = 0.0
    test_size: int = 200
    # model and local training
    model: str = "logistic-classification"
    hidden_dim: int = 0
    loss: str = ""  # empty: cross-entropy for classifiers, mean-absolute-error otherwise
    metric: str = ""  # empty: error-rate for classifiers, smape otherwise
    learning_rate: float = 0.05
    local_epochs: int = 2
    batch_size: int = 0
    buffer_window: int = 0
    prox_rule: str = "proximal"
    # baselines
    mu: float = 0.01
    participation: float = 0.2
    # server
    max_update_lead: int = 1  # -1 disables the fairness gate
    fixed_total_samples: int = 0
    staleness_exponent: float = 0.0
    scalar_bytes: int = 4
    # latency (seconds)
    compute_median: float = 1.0
    compute_sigma: float = 0.2
    uplink_median: float = 0.1
    uplink_sigma: float = 0.2
    downlink_median: float = 0.1
    downlink_sigma: float = 0.2
    slow_devices: list = field(default_factory=list)
    slow_factor: float = 10.0
    # seeds; -1 derives the value from the master seed
    seed: int = field(default_factory=_env_seed)
    data_seed: int = -1
    latency_seed: int = -1
    sampling_seed: int = -1
    sim_duration: float = 1000.0
    target_score: float = -1.0  # negative: skip bytes-to-target
    output_dir: str = "out"

    def __post_init__(self):
        validate(self)

    # -- derived values ----------------------------------------------------
    @property
    def is_classifier(self) -> bool:
        return self.model != "linear-regression"

    @property
    def resolved_loss(self) -> str:
        return self.loss or ("cross-entropy" if self.is_classifier else "mean-absolute-error")

    @property
    def resolved_metric(self) -> str:
        return self.metric or ("error-rate" if self.is_classifier else "smape")

    def derived_seed(self, name: str) -> int:
        own = getattr(self, f"{name}_seed")
        if own >= 0:
            return own
        tag = {"data": 1, "latency": 2, "sampling": 3}[name]
        return int(np.random.SeedSequence([self.seed & ((1 << 64) - 1), tag]).generate_state(1, np.uint64)[0])

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_CHOICES = {
    "mode": MODES,
    "lambda_direction": ("increase", "decrease"),
    "delta_mode": ("inverse-total", "literal"),
    "drift_kind": ("none", "sudden", "gradual"),
    "source": ("rotating-hyperplane", "gaussian-clusters", "csv-file"),
    "model": ("linear-regression", "logistic-classification", "mlp-1-hidden"),
    "loss": ("", "cross-entropy", "mean-absolute-error"),
    "metric": ("", "error-rate", "smape", "one-minus-f1"),
    "prox_rule": ("proximal", "gradient"),
}

# key -> (low, high, low_open, high_open)
_RANGES = {
    "num_devices": (1, math.inf, False, True),
    "gamma": (0, 1, True, False),
    "lambda_initial": (0, math.inf, True, True),
    "escalation_factor": (1, math.inf, True, True),
    "lambda_max": (0, math.inf, True, True),
    "decay_factor": (0, 1, True, False),
    "lambda_min": (0, math.inf, True, True),
    "significance": (0, 1, True, True),
    "queue_capacity": (1, math.inf, False, True),
    "warmup": (0, math.inf, False, True),
    "drift_fraction": (0, 1, False, False),
    "drift_start": (0, 1, False, False),
    "drift_duration": (0, math.inf, False, True),
    "samples_per_round": (1, math.inf, False, True),
    "total_rounds": (0, math.inf, False, True),
    "input_dim": (1, math.inf, False, True),
    "num_classes": (1, math.inf, False, True),
    "label_noise": (0, 1, False, False),
    "growth_rate": (0, math.inf, False, True),
    "test_size": (1, math.inf, False, True),
    "hidden_dim": (0, math.inf, False, True),
    "learning_rate": (0, math.inf, True, True),
    "local_epochs": (1, math.inf, False, True),
    "batch_size": (0, math.inf, False, True),
    "buffer_window": (0, math.inf, False, True),
    "mu": (0, math.inf, False, True),
    "participation": (0, 1, True, False),
    "max_update_lead": (-1, math.inf, False, True),
    "fixed_total_samples": (0, math.inf, False, True),
    "staleness_exponent": (0, math.inf, False, True),
    "scalar_bytes": (1, math.inf, False, True),
    "compute_median": (0, math.inf, True, True),
    "compute_sigma": (0, math.inf, False, True),
    "uplink_median": (0, math.inf, True, True),
    "uplink_sigma": (0, math.inf, False, True),
    "downlink_median": (0, math.inf, True, True),
    "downlink_sigma": (0, math.inf, False, True),
    "slow_factor": (0, math.inf, True, True),
    "sim_duration": (0, math.inf, False, False),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _where(key: str, lines: dict | None) -> str:
    if lines and key in lines:
        return f"line {lines[key]}: "
    return ""


def _coerce(key, value, lines):
    want = _TYPES[key]
    if want == "bool":
        ok = isinstance(value, bool)
    elif want == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif want == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif want == "str":
        ok = isinstance(value, str)
    else:  # list of device ids
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    if not ok:
        raise ConfigError(f"{_where(key, lines)}{key}: expected {want}, got {type(value).__name__} {value!r}")
    return value


def validate(cfg: RunConfig, lines: dict | None = None) -> None:
    for key, (lo, hi, lo_open, hi_open) in _RANGES.items():
        v = getattr(cfg, key)
        bad = v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi)
        if bad or (isinstance(v, float) and not math.isfinite(v) and key != "sim_duration"):
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise ConfigError(f"{_where(key, lines)}{key}: {v!r} outside {lb}{lo}, {hi}{rb}")
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigError(f"{_where(key, lines)}{key}: {getattr(cfg, key)!r} not one of {', '.join(a for a in allowed if a)}")
    if cfg.lambda_max < cfg.lambda_initial:
        raise ConfigError(f"{_where('lambda_max', lines)}lambda_max: must be >= lambda_initial")
    if cfg.lambda_direction == "decrease" and cfg.lambda_min > cfg.lambda_initial:
        raise ConfigError(f"{_where('lambda_min', lines)}lambda_min: must be <= lambda_initial")
    if cfg.corrupt_low > cfg.corrupt_high:
        raise ConfigError(f"{_where('corrupt_low', lines)}corrupt_low: must not exceed corrupt_high")
    if cfg.drift_kind == "gradual" and cfg.drift_duration < 1:
        raise ConfigError(f"{_where('drift_duration', lines)}drift_duration: gradual drift needs a duration >= 1")
    if cfg.source == "csv-file" and not cfg.csv_path:
        raise ConfigError(f"{_where('csv_path', lines)}csv_path: required when source is csv-file")
    if cfg.source == "rotating-hyperplane" and (cfg.num_classes != 2 or cfg.input_dim < 2):
        raise ConfigError(f"{_where('num_classes', lines)}num_classes: rotating-hyperplane needs 2 classes and input_dim >= 2")
    if (cfg.model == "mlp-1-hidden") != (cfg.hidden_dim > 0):
        raise ConfigError(f"{_where('hidden_dim', lines)}hidden_dim: must be > 0 exactly when model is mlp-1-hidden")
    if cfg.is_classifier != (cfg.resolved_loss == "cross-entropy"):
        raise ConfigError(f"{_where('loss', lines)}loss: {cfg.resolved_loss} does not fit model {cfg.model}")
    if cfg.is_classifier == (cfg.resolved_metric == "smape"):
        raise ConfigError(f"{_where('metric', lines)}metric: {cfg.resolved_metric} does not fit model {cfg.model}")
    bad = [k for k in cfg.slow_devices if not 0 <= k < cfg.num_devices]
    if bad:
        raise ConfigError(f"{_where('slow_devices', lines)}slow_devices: ids {bad} outside [0, {cfg.num_devices})")


def _line_numbers(text: str) -> dict:
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*([A-Za-z0-9_\-\"']+)\s*=", line)
        if m:
            out.setdefault(m.group(1).strip("\"'"), i)
    return out


def from_mapping(values: dict, lines: dict | None = None, base: RunConfig | None = None) -> RunConfig:
    unknown = [k for k in values if k not in _TYPES]
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{_where(k, lines)}unknown key {k!r}")
    coerced = {k: _coerce(k, v, lines) for k, v in values.items()}
    # assemble without __post_init__ so that errors can carry line numbers
    cfg = object.__new__(RunConfig)
    cfg.__dict__.update({**dataclasses.asdict(base or RunConfig()), **coerced})
    validate(cfg, lines)
    if cfg.mode == "fedprox" and "mu" not in values:
        log.info("fedprox without mu: using mu=%g", cfg.mu)
    return cfg


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _line_numbers(text)
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{_where(nested[0], lines)}{nested[0]}: tables are not allowed in the flat schema")
    try:
        return from_mapping(values, lines, base)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return parse_config_text(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, (int, list)):
        return json.dumps(v)
    return json.dumps(v)


def emit_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_toml_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def parse_value(raw: str):
    """Interpret a command-line value with TOML syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw
