"""Per-device data streams with injectable concept drift.

Every batch is a pure function of ``(StreamSpec, DriftPlan, round_index)``.
Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, round_index, purpose])``; both algorithms are specified
independently of platform, so batches are bit-identical everywhere.  Separate
purposes draw from separate sequences, which is what keeps a clean batch the
same whether or not a drift plan is attached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, ParseError

SOURCES = ("rotating-hyperplane", "gaussian-clusters", "csv-file")
DRIFT_KINDS = ("none", "sudden", "gradual")

# purposes for keyed generators
_FEATURES, _NOISE, _CORRUPT, _MIX, _TEST, _CONCEPT, _NEW_CONCEPT, _ASSIGN = range(8)
_MASK = (1 << 64) - 1


def keyed_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) & _MASK for k in key])))


@dataclass
class StreamBatch:
    features: np.ndarray
    labels: np.ndarray
    round_index: int = 0

    def __len__(self):
        return len(self.features)


@dataclass
class StreamSpec:
    source: str = "rotating-hyperplane"
    samples_per_round: int = 50
    total_rounds: int = 200
    seed: int = 0
    input_dim: int = 5
    num_classes: int = 2
    # shared by all devices of one federation so that they learn the same task
    concept_seed: int = 0
    rotation_rate: float = 0.0
    label_noise: float = 0.0
    cluster_spread: float = 2.0
    growth_rate: float = 0.0
    # csv-file only
    device_id: int | None = None
    data: StreamBatch | None = field(default=None, repr=False)
    validation: StreamBatch | None = field(default=None, repr=False)
    test: StreamBatch | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"unknown stream source {self.source!r}")
        if self.samples_per_round < 1 or self.total_rounds < 0:
            raise ConfigError("samples_per_round must be >= 1 and total_rounds >= 0")
        if self.source == "rotating-hyperplane" and (self.input_dim < 2 or self.num_classes != 2):
            raise ConfigError("rotating-hyperplane needs input_dim >= 2 and num_classes == 2")
        if self.source == "csv-file" and self.data is None:
            raise ConfigError("csv-file streams carry their rows; use load_csv")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise must be in [0, 1]")

    def batch_size(self, round_index: int) -> int:
        if self.growth_rate == 0:
            return self.samples_per_round
        return max(1, int(self.samples_per_round * (1.0 + self.growth_rate) ** round_index))


@dataclass(frozen=True)
class DriftPlan:
    kind: str = "none"
    start_fraction: float = 0.4
    # None: sudden drift lasts until the end of the stream
    duration_rounds: int | None = None
    corrupt_low: float = 10.0
    corrupt_high: float = 1000.0

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ConfigError(f"unknown drift kind {self.kind!r}")
        if not 0.0 <= self.start_fraction <= 1.0:
            raise ConfigError("start_fraction must be in [0, 1]")
        if self.kind == "gradual" and not self.duration_rounds:
            raise ConfigError("gradual drift needs duration_rounds >= 1")
        if self.duration_rounds is not None and self.duration_rounds < 1:
            raise ConfigError("duration_rounds must be >= 1")
        if self.corrupt_low > self.corrupt_high:
            raise ConfigError("corrupt_low must not exceed corrupt_high")

    def start_round(self, total_rounds: int) -> int:
        return int(math.floor(self.start_fraction * total_rounds + 1e-9))

    def sudden_active(self, round_index: int, total_rounds: int) -> bool:
        if self.kind != "sudden":
            return False
        start = self.start_round(total_rounds)
        if round_index < start:
            return False
        return self.duration_rounds is None or round_index < start + self.duration_rounds

    def old_concept_prob(self, round_index: int, total_rounds: int) -> float:
        """Probability that a sample comes from the pre-drift concept (gradual drift)."""
        if self.kind != "gradual":
            return 1.0
        start = self.start_round(total_rounds)
        frac = (round_index - start) / self.duration_rounds
        return float(min(1.0, max(0.0, 1.0 - frac)))


NO_DRIFT = DriftPlan()


# -- concepts -----------------------------------------------------------------

def _hyperplane_basis(spec: StreamSpec):
    q, _ = np.linalg.qr(keyed_rng(spec.concept_seed, _CONCEPT).standard_normal((spec.input_dim, 2)))
    return q[:, 0], q[:, 1]


def boundary_vector(spec: StreamSpec, round_index: int) -> np.ndarray:
    """Unit normal of the decision hyperplane at ``round_index``; turns by ``rotation_rate`` radians per round."""
    u, v = _hyperplane_basis(spec)
    angle = spec.rotation_rate * round_index
    return np.cos(angle) * u + np.sin(angle) * v


def _drifted_boundary(spec: StreamSpec) -> np.ndarray:
    a = keyed_rng(spec.concept_seed, _NEW_CONCEPT).standard_normal(spec.input_dim)
    return a / np.linalg.norm(a)


def _cluster_centers(spec: StreamSpec) -> np.ndarray:
    return spec.cluster_spread * keyed_rng(spec.concept_seed, _CONCEPT).standard_normal((spec.num_classes, spec.input_dim))


def _draw(spec: StreamSpec, plan: DriftPlan, round_index: int, n: int, key: tuple):
    """``n`` samples of the concept in force at ``round_index``; all randomness from ``key``."""
    rng = keyed_rng(*key)
    p_old = plan.old_concept_prob(round_index, spec.total_rounds)
    mix = keyed_rng(*key, _MIX).random(n) >= p_old
    if spec.source == "gaussian-clusters":
        y = rng.integers(0, spec.num_classes, n)
        # the new concept moves every class onto the next class's center
        idx = np.where(mix, (y + 1) % spec.num_classes, y)
        x = _cluster_centers(spec)[idx] + rng.standard_normal((n, spec.input_dim))
    else:
        x = rng.standard_normal((n, spec.input_dim))
        y = (x @ boundary_vector(spec, round_index) > 0).astype(int)
        if mix.any():
            y[mix] = (x[mix] @ _drifted_boundary(spec) > 0).astype(int)
    if spec.label_noise > 0:
        flip = keyed_rng(*key, _NOISE).random(n) < spec.label_noise
        if spec.num_classes == 2:
            y = np.where(flip, 1 - y, y)
        else:
            shift = keyed_rng(*key, _NOISE, 1).integers(1, spec.num_classes, n)
            y = np.where(flip, (y + shift) % spec.num_classes, y)
    return x, y


# -- public operations ----------------------------------------------------------

def rotating_hyperplane(round_index: int, spec: StreamSpec) -> StreamBatch:
    if spec.source != "rotating-hyperplane":
        raise ConfigError("rotating_hyperplane called on a different source")
    x, y = _draw(spec, NO_DRIFT, round_index, spec.batch_size(round_index), (spec.seed, round_index, _FEATURES))
    return StreamBatch(x, y, round_index)


def next_batch(spec: StreamSpec, plan: DriftPlan | None, round_index: int) -> StreamBatch:
    """Training batch that arrives on a device at ``round_index``."""
    plan = plan or NO_DRIFT
    if not 0 <= round_index < spec.total_rounds:
        raise InvalidInputError(f"round_index {round_index} outside [0, {spec.total_rounds})")
    if spec.source == "csv-file":
        lo = round_index * spec.samples_per_round
        x = spec.data.features[lo:lo + spec.samples_per_round].copy()
        y = spec.data.labels[lo:lo + spec.samples_per_round].copy()
    else:
        x, y = _draw(spec, plan, round_index, spec.batch_size(round_index), (spec.seed, round_index, _FEATURES))
    if plan.sudden_active(round_index, spec.total_rounds):
        x = keyed_rng(spec.seed, round_index, _CORRUPT).uniform(plan.corrupt_low, plan.corrupt_high, x.shape)
    return StreamBatch(x, y, round_index)


def test_batch(spec: StreamSpec, plan: DriftPlan | None, round_index: int, size: int) -> StreamBatch:
    """Held-out samples for the concept in force at ``round_index``.

    Gradual drift is reflected (the concept itself moves); sudden feature
    corruption is not, since it models damaged incoming training samples.
    """
    if spec.source == "csv-file":
        return spec.test
    plan = plan or NO_DRIFT
    r = min(max(round_index, 0), max(spec.total_rounds - 1, 0))
    # the same samples every time; only their labelling follows the concept
    x, y = _draw(spec, plan, r, size, (spec.seed, 0, _TEST))
    return StreamBatch(x, y, r)


def assign_drift_devices(num_devices: int, drift_fraction: float, seed: int) -> set[int]:
    if not 0.0 <= drift_fraction <= 1.0:
        raise ConfigError("drift fraction must be in [0, 1]")
    k = int(math.floor(drift_fraction * num_devices + 0.5))
    chosen = keyed_rng(seed, _ASSIGN).choice(num_devices, size=k, replace=False)
    return {int(i) for i in chosen}


@dataclass(frozen=True)
class CsvSchema:
    num_features: int
    label_kind: str = "class"  # or "real"
    devices: tuple[int, ...] | None = None  # default: every id from 0 to the largest seen


def load_csv(path, schema: CsvSchema, samples_per_round: int = 10) -> list[StreamSpec]:
    """Read ``device_id,feature_0..feature_{d-1},label`` rows into one stream per device.

    Each device's rows keep file order and are split 60/20/20 into training,
    validation and test; the training part is cut into rounds of
    ``samples_per_round`` rows.
    """
    expected = ["device_id"] + [f"feature_{i}" for i in range(schema.num_features)] + ["label"]
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: line 1: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in expected if c not in header]
        if missing:
            raise ParseError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
        cols = [header.index(c) for c in expected]
        for rec in reader:
            line = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: line {line}: expected {len(header)} cells, got {len(rec)}")
            try:
                dev = int(rec[cols[0]])
            except ValueError:
                raise ParseError(f"{path}: line {line}: device_id {rec[cols[0]]!r} is not an integer") from None
            vals = []
            for name, c in zip(expected[1:], cols[1:]):
                try:
                    v = float(rec[c])
                except ValueError:
                    raise ParseError(f"{path}: line {line}: column {name}: non-numeric cell {rec[c]!r}") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: line {line}: column {name}: non-finite value")
                vals.append(v)
            if schema.label_kind == "class" and not float(vals[-1]).is_integer():
                raise ParseError(f"{path}: line {line}: class label {vals[-1]!r} is not an integer")
            rows.setdefault(dev, []).append(vals)

    devices = schema.devices if schema.devices is not None else range(max(rows, default=-1) + 1)
    if not devices:
        raise ParseError(f"{path}: no data rows")
    specs = []
    for dev in devices:
        part = rows.get(dev)
        if not part:
            raise ParseError(f"{path}: device {dev} has no rows")
        arr = np.asarray(part, dtype=float)
        n = len(arr)
        n_train, n_val = int(0.6 * n), int(0.2 * n)
        if n_train == 0 or n - n_train - n_val == 0:
            raise ParseError(f"{path}: device {dev} has too few rows ({n}) for a 60/20/20 split")
        x, y = arr[:, :-1], arr[:, -1]
        if schema.label_kind == "class":
            y = y.astype(int)
        split = [StreamBatch(x[a:b], y[a:b]) for a, b in ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n))]
        specs.append(StreamSpec(
            source="csv-file",
            samples_per_round=samples_per_round,
            total_rounds=math.ceil(n_train / samples_per_round),
            input_dim=schema.num_features,
            num_classes=int(y.max()) + 1 if schema.label_kind == "class" else 1,
            device_id=dev,
            data=split[0],
            validation=split[1],
            test=split[2],
        ))
    return specs
