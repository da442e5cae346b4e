#!/usr/bin/env python3
"""Run the machine replacement sweep: all engines across path lengths.

Produces the estimates table, the RMSE/time-vs-path-length rows, and
per-pair update histograms under --out.

    python scripts/run_machine_study.py --out out/machine [--seed N]
"""
import argparse

from ddcsim import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    preset = bench.load_preset("machine-sweep")
    manifest = bench.run_preset(preset, args.out, master_seed=args.seed,
                                workers=args.workers)
    print(f"done: {manifest['cells']} cells, "
          f"{manifest['n_failures']} failures -> {args.out}")


if __name__ == "__main__":
    main()
