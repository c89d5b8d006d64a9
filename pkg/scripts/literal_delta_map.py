"""Where can the literal-delta detector fire?  Prints the reachable region per history length."""

import argparse

from fedcond.calibration import literal_firing_points


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", default="1,5,10,15,20,50,100")
    ap.add_argument("--grid", type=int, default=200)
    args = ap.parse_args()
    for a in (int(v) for v in args.lengths.split(",")):
        pts = literal_firing_points(a, args.grid)
        if pts:
            print(f"a={a:<4d} {len(pts):5d} points; history mean <= {max(p[0] for p in pts):.3f}, "
                  f"new score >= {min(p[1] for p in pts):.3f}")
        else:
            print(f"a={a:<4d}     0 points")


if __name__ == "__main__":
    main()
