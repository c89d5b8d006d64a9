"""Metrics over record streams and the on-disk output format."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .sim import RoundRecord

CURVE_FIELDS = ("time", "mode", "mean_score", "variance", "uplink_bytes", "downlink_bytes")

# how each stored (larger-is-worse) metric reads in its usual orientation
NATURAL = {
    "error-rate": ("accuracy", lambda v: 1.0 - v),
    "one-minus-f1": ("f1", lambda v: 1.0 - v),
    "smape": ("smape", lambda v: v),
}


@dataclass
class FairnessSummary:
    top20_avg: float | None
    top20_var: float | None
    bottom20_avg: float | None
    bottom20_var: float | None
    all_avg: float
    all_var: float
    drift_devices_var: float | None = None
    group_size: int | None = None
    orientation: str = "lower-is-better"


def _pvar(v) -> float:
    v = np.asarray(v, dtype=float)
    # identical values: skip the rounding residue of the two-pass formula
    return 0.0 if v.size == 0 or v.min() == v.max() else float(v.var())


def fairness_summary(final_scores, drift_devices=()) -> FairnessSummary:
    """Best and worst 20% of devices by final score (lower is better), with population variances.

    With fewer than 5 devices the top/bottom fields are None.
    """
    s = np.sort(np.asarray(final_scores, dtype=float))
    drift = [final_scores[k] for k in sorted(drift_devices)]
    drift_var = _pvar(drift) if drift else None
    if len(s) < 5:
        return FairnessSummary(None, None, None, None, float(s.mean()), _pvar(s), drift_var)
    g = math.ceil(0.2 * len(s) - 1e-9)
    top, bottom = s[:g], s[-g:]
    return FairnessSummary(float(top.mean()), _pvar(top), float(bottom.mean()), _pvar(bottom),
                           float(s.mean()), _pvar(s), drift_var, g)


def bytes_to_target(records, target_score: float):
    """``(uplink, downlink)`` at the first record whose mean score is at or below ``target_score``; None if never."""
    for r in records:
        if r.mean_score <= target_score:
            return r.uplink_bytes, r.downlink_bytes
    return None


def ledger_spread(ledger) -> int:
    return int(max(ledger) - min(ledger))


def drift_onset_time(records, drift_devices, start_round: int) -> float | None:
    """Arrival time of the first update trained on a drifted batch."""
    for r in records:
        for v in r.verdicts:
            if v["device_id"] in drift_devices and v["round"] >= start_round:
                return r.simulated_time
    return None


def smoothed_scores(records, window: int) -> np.ndarray:
    m = np.array([r.mean_score for r in records])
    c = np.cumsum(np.insert(m, 0, 0.0))
    idx = np.arange(1, len(m) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class Recovery:
    onset: float
    pre_level: float
    peak: float
    threshold: float
    window_end: float
    recovered: bool
    recovery_delay: float | None


def recovery_analysis(records, onset: float, tolerance: float = 0.10, window_frac: float = 0.25,
                      smooth: int = 20) -> Recovery:
    """Does the error come back within ``tolerance`` of its pre-drift level inside the window?

    The pre-drift level averages the raw mean score over the last tenth of the
    time before ``onset``.  Scores are smoothed with a trailing mean over
    ``smooth`` records.  Inside ``[onset, onset + window_frac * remaining]`` the
    run counts as recovered if the smoothed score never leaves the band, or
    returns to it after the window's worst point.
    """
    t = np.array([r.simulated_time for r in records])
    raw = np.array([r.mean_score for r in records])
    sm = smoothed_scores(records, smooth)
    pre_mask = (t < onset) & (t >= 0.9 * onset)
    if not pre_mask.any():
        pre_mask = t < onset
    pre = float(raw[pre_mask].mean())
    thr = pre * (1.0 + tolerance)
    end = float(t[-1])
    w_end = onset + window_frac * (end - onset)
    win = np.flatnonzero((t >= onset) & (t <= w_end))
    if len(win) == 0:
        return Recovery(onset, pre, pre, thr, w_end, True, 0.0)
    peak_i = win[np.argmax(sm[win])]
    if sm[peak_i] <= thr:
        return Recovery(onset, pre, float(sm[peak_i]), thr, w_end, True, 0.0)
    after = [i for i in win if i > peak_i and sm[i] <= thr]
    if after:
        return Recovery(onset, pre, float(sm[peak_i]), thr, w_end, True, float(t[after[0]] - onset))
    return Recovery(onset, pre, float(sm[peak_i]), thr, w_end, False, None)


def natural_score(metric: str, value: float) -> tuple[str, float]:
    name, conv = NATURAL[metric]
    return name, conv(value)


def summarize(outcome, target_score: float | None = None) -> dict:
    """Summary of one simulated run: final scores, fairness, traffic, ledger."""
    recs = outcome.records
    fed = outcome.federation
    metric = fed.cfg.resolved_metric
    out = {
        "mode": fed.cfg.mode,
        "metric": metric,
        "orientation": "lower-is-better",
        "aggregations": len(recs),
        "simulated_time": recs[-1].simulated_time if recs else 0.0,
        "uplink_bytes": outcome.uplink_bytes,
        "downlink_bytes": outcome.downlink_bytes,
        "ledger": list(outcome.ledger),
        "ledger_spread": ledger_spread(outcome.ledger) if outcome.ledger else 0,
        "drift_devices": sorted(fed.drift_devices),
        "drift_detections": sum(len(r.drift_flags) for r in recs),
    }
    if recs:
        final = recs[-1]
        name, nat = natural_score(metric, final.mean_score)
        out["final_mean_score"] = final.mean_score
        out["final_variance"] = final.variance
        out[f"final_mean_{name}"] = nat
        out["fairness"] = asdict(fairness_summary(final.scores, fed.drift_devices))
    else:
        out["final_mean_score"] = None
        out["fairness"] = None
    if target_score is not None and target_score >= 0:
        hit = bytes_to_target(recs, target_score)
        out["bytes_to_target"] = {"target": target_score, "reached": hit is not None,
                                  "uplink_bytes": hit[0] if hit else None,
                                  "downlink_bytes": hit[1] if hit else None}
    return out


# -- files ------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def records_jsonl(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=False, allow_nan=False) + "\n" for r in records)


def curves_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for r in records:
        w.writerow([repr(r.simulated_time), r.mode, repr(r.mean_score), repr(r.variance), r.uplink_bytes,
                    r.downlink_bytes])
    return buf.getvalue()


def emit(records, summary: dict, out_dir) -> dict:
    """Write ``records.jsonl``, ``summary.json`` and ``curves.csv`` into ``out_dir``; each file is replaced atomically."""
    out = Path(out_dir)
    paths = {"records": out / "records.jsonl", "summary": out / "summary.json", "curves": out / "curves.csv"}
    try:
        _atomic_write(paths["records"], records_jsonl(records))
        _atomic_write(paths["summary"], json.dumps(summary, indent=2, allow_nan=False) + "\n")
        _atomic_write(paths["curves"], curves_csv(records))
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return paths


def read_records(path) -> list[RoundRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RoundRecord(**json.loads(line)) for line in fh if line.strip()]
