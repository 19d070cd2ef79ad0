#!/usr/bin/env python3
"""Five-task latency breakdown (establish session, receive data, reconstruct
secret, detect watermark, terminate session) for both watermarking schemes,
with and without the simulated enclave in the path.

Equivalent to: harness latency --scheme ... --mode ... --out ...
"""

import argparse

from pubmark import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--schemes", default="freqywm,obt")
    ap.add_argument("--modes", default="tee,plain")
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="results/latency")
    args = ap.parse_args()

    all_rows = []
    for scheme in args.schemes.split(","):
        for mode in args.modes.split(","):
            all_rows.extend(
                harness.run_latency_breakdown(scheme, mode, args.out, runs=args.runs, seed=args.seed)
            )
    harness.write_latency_csv(all_rows, f"{args.out}/latency_breakdown.csv")
    harness.plot_latency(all_rows, args.out)
    for row in all_rows:
        print(
            f"{row['scheme']:8s} {row['mode']:6s} {row['task']:20s} {row['mean_ms']:9.3f} ms"
        )
    print(f"artifacts in {args.out}/")


if __name__ == "__main__":
    main()
