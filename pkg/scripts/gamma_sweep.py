"""Final error and traffic for several concurrency fractions on the default scenario."""

import argparse
from pathlib import Path

import numpy as np

from fedcond import RunConfig, simulate
from fedcond.report import emit, summarize
from fedcond.sim import _evaluate_all


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gammas", default="0.1,0.2,0.4,0.6")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/gamma_sweep")
    args = ap.parse_args()
    for g in (float(v) for v in args.gammas.split(",")):
        out = simulate(RunConfig(seed=args.seed, gamma=g))
        untrained = np.mean(_evaluate_all(out.federation, out.federation.init_model))
        emit(out.records, summarize(out), Path(args.out) / f"gamma={g:g}")
        print(f"gamma={g:<4g} aggregations={len(out.records):5d} final={out.records[-1].mean_score:.3f} "
              f"untrained={untrained:.3f} downlink={out.downlink_bytes}")


if __name__ == "__main__":
    main()
