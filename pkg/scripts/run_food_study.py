#!/usr/bin/env python3
"""Run a food choice case study (1a..4b) or the beta-sensitivity variant.

Cases 3b/4b can exceed the configured state-action cap; pass --force to
run them anyway once you have the memory and hours to spare.

    python scripts/run_food_study.py --case 1a --out out/food1a
    python scripts/run_food_study.py --case beta995 --out out/beta
"""
import argparse

from ddcsim import bench

CASES = ["1a", "1b", "2a", "2b", "3a", "3b", "4a", "4b", "beta995"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", choices=CASES, required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--force", action="store_true")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    name = "food-beta995" if args.case == "beta995" else f"food-case{args.case}"
    preset = bench.load_preset(name)
    manifest = bench.run_preset(preset, args.out, master_seed=args.seed,
                                force=args.force, workers=args.workers)
    print(f"done: {manifest['cells']} cells, "
          f"{manifest['n_failures']} failures -> {args.out}")


if __name__ == "__main__":
    main()
