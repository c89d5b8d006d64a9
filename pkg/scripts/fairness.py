"""Update-count balance and downlink traffic with one 10x straggler among 20 devices."""

import argparse

from fedcond import scenarios, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()
    print(f"{'seed':>4} {'mode':>16} {'latency':>13} {'aggs':>6} {'spread':>6} {'slowest':>7} {'downlink/agg':>12}")
    for seed in range(args.seeds):
        for mode in ("fedcond", "async-broadcast"):
            for hetero in (True, False):
                out = simulate(scenarios.fairness_config(seed, hetero, mode=mode))
                per_agg = out.downlink_bytes / max(len(out.records), 1)
                print(f"{seed:>4} {mode:>16} {'straggler' if hetero else 'homogeneous':>13} {len(out.records):>6} "
                      f"{max(out.ledger) - min(out.ledger):>6} {min(out.ledger):>7} {per_agg:>12.1f}")


if __name__ == "__main__":
    main()
