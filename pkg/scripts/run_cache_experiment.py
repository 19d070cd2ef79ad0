#!/usr/bin/env python3
"""Cache hit-ratio study: replays the fixed/flexible-similarity workloads
against the plain-LRU baselines and the proportional cache, then writes
cache_hit_ratio.csv plus SVG/PNG plots.

Equivalent to: harness cache --capacities ... --pairs ... --trials ... --out ...
"""

import argparse

from pubmark import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--capacities", default="10,20,50,100,250")
    ap.add_argument("--pairs", type=int, default=250)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--requests", type=int, default=1000)
    ap.add_argument("--threshold", type=int, default=70)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/cache")
    args = ap.parse_args()

    rows = harness.cache_study(
        args.out,
        capacities=tuple(int(c) for c in args.capacities.split(",")),
        pairs=args.pairs,
        trials=args.trials,
        seed=args.seed,
        requests=args.requests,
        threshold=args.threshold,
    )
    for row in rows:
        print(f"{row['policy']:12s} capacity={row['capacity']:<4d} mean HR={row['mean_hit_ratio']:.4f}")
    print(f"artifacts in {args.out}/")


if __name__ == "__main__":
    main()
