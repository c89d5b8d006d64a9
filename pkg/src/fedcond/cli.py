"""Command line: ``run``, ``compare``, ``sweep`` and ``calibrate``.

Every config key is also a flag (``--gamma 0.4``); flags override the file.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from . import calibration
from .config import MODES, RunConfig, from_mapping, parse_config, parse_value
from .errors import ConfigError
from .report import _atomic_write, emit, summarize
from .sim import simulate

log = logging.getLogger("fedcond")

SWEEPABLE = ("gamma", "drift_fraction")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    taken = {"output_dir"}
    for f in fields(RunConfig):
        if f.name in taken:
            continue
        flag = "--" + f.name.replace("_", "-")
        kw = {"choices": MODES} if f.name == "mode" else {}
        p.add_argument(flag, dest=f.name, default=None, metavar="VALUE", **kw)


def load_config(args) -> RunConfig:
    base = parse_config(args.config) if args.config else RunConfig()
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        value = raw if f.type == "str" else parse_value(raw)
        if f.type == "float" and isinstance(value, int):
            value = float(value)
        overrides[f.name] = value
    return from_mapping(overrides, base=base) if overrides else base


def _run_one(cfg: RunConfig):
    outcome = simulate(cfg)
    target = cfg.target_score if cfg.target_score >= 0 else None
    return outcome.records, summarize(outcome, target)


def cmd_run(args) -> int:
    cfg = load_config(args)
    records, summary = _run_one(cfg)
    summary["config"] = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    paths = emit(records, summary, cfg.output_dir)
    print(f"{cfg.mode}: {len(records)} records, final mean score "
          f"{summary['final_mean_score']!s} -> {paths['records'].parent}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args)
    all_records, summaries = [], {}
    for mode in MODES:
        records, summary = _run_one(cfg.replace(mode=mode))
        all_records.extend(records)
        summaries[mode] = summary
        print(f"{mode:16s} records={len(records):6d} final={summary['final_mean_score']!s} "
              f"uplink={summary['uplink_bytes']} downlink={summary['downlink_bytes']}")
    emit(all_records, {"modes": summaries, "seed": cfg.seed}, cfg.output_dir)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    configs = [cfg.replace(**{args.param: v}, output_dir=str(Path(cfg.output_dir) / f"{args.param}={v:g}"))
               for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_run_one, configs))
    else:
        results = [_run_one(c) for c in configs]
    table = {}
    for c, v, (records, summary) in zip(configs, values, results):
        emit(records, summary, c.output_dir)
        table[f"{v:g}"] = summary["final_mean_score"]
        print(f"{args.param}={v:g}: final={summary['final_mean_score']!s} aggregations={len(records)}")
    _atomic_write(Path(cfg.output_dir) / "sweep.json", json.dumps({"param": args.param, "final_mean_score": table},
                                                                  indent=2) + "\n")
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_config(args)
    fp = calibration.false_positive_rate(args.evaluations, args.stationary_mean, args.score_batch,
                                         cfg.queue_capacity, cfg.significance, cfg.delta_mode, cfg.warmup, cfg.seed)
    power = calibration.detection_power(args.trials, args.before, args.after, args.score_batch, cfg.queue_capacity,
                                        args.within, cfg.significance, cfg.delta_mode, cfg.seed)
    result = {"delta_mode": cfg.delta_mode, "significance": cfg.significance, "queue_capacity": cfg.queue_capacity,
              "false_positive_rate": fp, "detection_power": power, "within": args.within,
              "shift": [args.before, args.after], "stationary_mean": args.stationary_mean}
    print(json.dumps(result, indent=2))
    _atomic_write(Path(cfg.output_dir) / "calibrate.json", json.dumps(result, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcond", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="run all four modes on one scenario with shared seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("sweep", help="grid over gamma or the drift fraction")
    _add_config_flags(p)
    p.add_argument("--param", choices=SWEEPABLE, required=True)
    p.add_argument("--values", required=True, help="comma separated, e.g. 0.1,0.2,0.4,0.6")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("calibrate", help="detector false-positive rate and power")
    _add_config_flags(p)
    p.add_argument("--evaluations", type=int, default=10_000)
    p.add_argument("--stationary-mean", type=float, default=0.3)
    p.add_argument("--score-batch", type=int, default=50, help="samples behind each simulated score")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--before", type=float, default=0.1)
    p.add_argument("--after", type=float, default=0.6)
    p.add_argument("--within", type=int, default=2)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
