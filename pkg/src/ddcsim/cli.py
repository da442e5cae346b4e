"""Command-line interface.

Subcommands mirror the pipeline stages: solve-dp, generate-data,
estimate-first-stage, simulate-paths, compute-values, estimate, and the
bench runner (bench run / bench list).
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import bench
from .dp import FixedPointConfig, solve_fixed_point
from .engines import EngineConfig, run_engine
from .estimator import MdeConfig, estimate
from .first_stage import FirstStage, estimate_first_stage
from .models import EULER_GAMMA, load_model_config, softmax_rows
from .panel import Panel, generate_panel
from .paths import binary_size, export_paths_csv, read_paths, simulate_paths, \
    write_paths


def _parse_theta(text):
    return np.array([float(x) for x in text.split(",")])


def _engine_config(args):
    return EngineConfig(
        kind=args.engine,
        alpha=args.alpha,
        n_step=args.n_step,
        gamma=0.0 if getattr(args, "gamma_off", False) else EULER_GAMMA,
        sweeps=getattr(args, "sweeps", 1),
    )


def cmd_solve_dp(args):
    model, theta = load_model_config(args.model_config)
    if theta is None:
        raise SystemExit("model config carries no theta values")
    cfg = FixedPointConfig(
        include_euler_constant=not args.gamma_off,
        max_iter=1_000_000 if model.beta > 0.99 else 100_000,
    )
    table = solve_fixed_point(model, theta, cfg)
    ccps = softmax_rows(table.values)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "action", "value", "ccp"])
        for s in range(model.n_states):
            for a in range(model.n_actions):
                w.writerow([s, a, repr(float(table.values[s, a])),
                            repr(float(ccps[s, a]))])
    print(f"solved in {table.meta['iterations']} sweeps "
          f"(residual {table.meta['residuals'][-1]:.2e}); wrote {args.out}")


def cmd_generate_data(args):
    model, theta = load_model_config(args.model_config)
    cfg = FixedPointConfig(
        max_iter=1_000_000 if model.beta > 0.99 else 100_000
    )
    ccps = softmax_rows(solve_fixed_point(model, theta, cfg).values)
    panel = generate_panel(model, ccps, args.agents, args.periods, args.seed)
    panel.save_csv(args.out)
    print(f"wrote {panel.n_records} records to {args.out}")


def cmd_estimate_first_stage(args):
    model, _ = load_model_config(args.model_config)
    panel = Panel.load_csv(args.panel)
    fs = estimate_first_stage(panel, model, floor=args.floor)
    fs.save(args.out_dir)
    print(f"first stage over {len(fs.visited_states())} visited states "
          f"-> {args.out_dir}")


def cmd_simulate_paths(args):
    fs = FirstStage.load(args.first_stage)
    ps = simulate_paths(fs, args.start_rule, args.t_end, args.n_path,
                        args.seed)
    written = write_paths(ps, args.out)
    expect = binary_size(ps.n_path, ps.t_end)
    print(f"{ps.n_path} paths x {ps.t_end} steps -> {args.out}")
    print(f"binary size {written} bytes "
          f"(64-byte header + {ps.n_path * ps.t_end} x 8-byte records"
          f"{'' if written == expect else ', UNEXPECTED'})")
    if args.csv:
        size = export_paths_csv(ps, args.csv)
        print(f"csv export {size} bytes ({size / written:.2f}x the binary)")


def cmd_compute_values(args):
    model, _ = load_model_config(args.model_config)
    fs = FirstStage.load(args.first_stage)
    ps = read_paths(args.paths)
    theta = model.theta(_parse_theta(args.theta))
    table, counter = run_engine(model, ps, theta, fs, _engine_config(args))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "action", "value", "updates"])
        for s in range(model.n_states):
            for a in range(model.n_actions):
                w.writerow([s, a, repr(float(table.values[s, a])),
                            int(counter.counts[s, a])])
    print(f"{counter.total} updates -> {args.out}")


def cmd_estimate(args):
    model, _ = load_model_config(args.model_config)
    fs = FirstStage.load(args.first_stage)
    ps = read_paths(args.paths)
    cfg = MdeConfig(
        theta0=_parse_theta(args.theta0),
        engine=_engine_config(args),
        max_fevals=args.max_fevals,
        min_state_share=args.min_state_share,
    )
    report = estimate(model, fs, ps, cfg)
    text = report.to_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_bench_run(args):
    preset = bench.load_preset(args.name)
    manifest = bench.run_preset(preset, args.out, master_seed=args.seed,
                                force=args.force, workers=args.workers)
    print(f"bundle written to {args.out} "
          f"({manifest['cells']} cells, {manifest.get('n_failures', 0)} failures)")


def cmd_bench_list(args):
    for name in bench.list_presets():
        print(name)


def _add_engine_flags(p, with_sweeps=False):
    p.add_argument("--engine", choices=["ccs", "rlmc", "rltd"], required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--n-step", dest="n_step", type=int, default=1)
    p.add_argument("--gamma-off", dest="gamma_off", action="store_true",
                   help="drop the shock-mean constant from reward terms")
    if with_sweeps:
        p.add_argument("--sweeps", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ddcsim",
        description="Two-step forward-simulation estimation of dynamic "
                    "discrete choice models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-dp", help="value iteration oracle -> CSV")
    p.add_argument("--model-config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma-off", dest="gamma_off", action="store_true")
    p.set_defaults(fn=cmd_solve_dp)

    p = sub.add_parser("generate-data", help="simulate a synthetic panel")
    p.add_argument("--model-config", required=True)
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--periods", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("estimate-first-stage",
                       help="frequency-estimate choice and transition tables")
    p.add_argument("--model-config", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--floor", type=float, default=1e-6)
    p.set_defaults(fn=cmd_estimate_first_stage)

    p = sub.add_parser("simulate-paths", help="pre-simulate forward paths")
    p.add_argument("--first-stage", required=True)
    p.add_argument("--start-rule", choices=["all-pairs", "bootstrap"],
                   default="all-pairs")
    p.add_argument("--t-end", dest="t_end", type=int, required=True)
    p.add_argument("--n-path", dest="n_path", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export rows as CSV")
    p.set_defaults(fn=cmd_simulate_paths)

    p = sub.add_parser("compute-values", help="one standalone engine run")
    p.add_argument("--model-config", required=True)
    p.add_argument("--first-stage", required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--theta", required=True,
                   help="comma-separated parameter values")
    p.add_argument("--out", required=True)
    _add_engine_flags(p, with_sweeps=True)
    p.set_defaults(fn=cmd_compute_values)

    p = sub.add_parser("estimate", help="minimum-distance estimation")
    p.add_argument("--model-config", required=True)
    p.add_argument("--first-stage", required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--theta0", required=True)
    p.add_argument("--max-fevals", dest="max_fevals", type=int, default=2000)
    p.add_argument("--min-state-share", dest="min_state_share", type=float,
                   default=0.0)
    p.add_argument("--out")
    _add_engine_flags(p)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("bench", help="experiment presets")
    bsub = p.add_subparsers(dest="bench_command", required=True)
    b = bsub.add_parser("run", help="run a preset into a bundle directory")
    b.add_argument("name")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--force", action="store_true",
                   help="run above the state-action cap")
    b.add_argument("--workers", type=int, default=None,
                   help=f"parallel cells (default ${bench.WORKERS_ENV} or 1)")
    b.set_defaults(fn=cmd_bench_run)
    b = bsub.add_parser("list", help="list shipped presets")
    b.set_defaults(fn=cmd_bench_list)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
