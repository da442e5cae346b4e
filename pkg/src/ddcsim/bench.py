"""Experiment presets and report-bundle generation.

A preset describes one Monte Carlo study: a model configuration, a panel
size, a grid of engines x path lengths, and replication counts.  Running
it produces plot-ready CSVs: a long-format estimates table, RMSE/time
rows across path lengths, time-vs-state-space rows, and per-pair
update-count histograms.  Bundles are deterministic given the master
seed, except for the wall-time columns.

Presets ship as JSON files in the package's presets/ directory; see
`load_preset` for the schema.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dp import FixedPointConfig, ccps_from_fixed_point
from .engines import EngineConfig, UpdateCounter, run_engine
from .estimator import replicate
from .first_stage import estimate_first_stage
from .models import build_model, model_config_hash
from .panel import generate_panel
from .paths import simulate_paths

__all__ = ["ExperimentPreset", "PresetGateError", "load_preset",
           "preset_dir", "list_presets", "run_preset", "update_histogram"]

WORKERS_ENV = "DDCSIM_WORKERS"


class PresetGateError(RuntimeError):
    """Preset exceeds the configured state-action cap and --force is off."""


@dataclass
class ExperimentPreset:
    """One study: model, panel, engine x t_end grid, replication counts."""

    name: str
    model: dict
    t_end: list
    engines: list
    panel_agents: int = 20_000
    panel_periods: int = 100
    n_path: int = 0
    n_path_per_cell: float = 0.0
    start_rule: str = "bootstrap"
    replications: int = 50
    master_seed: int = 20240601
    min_state_share: float = 0.0
    state_action_cap: int = 400_000
    theta0_scale: float = 1.5
    max_fevals: int = 2000
    notes: str = ""

    @classmethod
    def from_dict(cls, d) -> "ExperimentPreset":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown preset keys: {sorted(unknown)}")
        return cls(**d)

    def engine_configs(self):
        out = []
        for e in self.engines:
            out.append(EngineConfig(
                kind=e["kind"],
                alpha=e.get("alpha", 0.5),
                n_step=e.get("n_step", 1),
            ))
        return out

    def size_bound(self) -> int:
        """Cheap upper bound on S x J, checked before building the model."""
        m = self.model
        if m.get("kind") == "machine":
            return m.get("n_levels", 5) * 2
        n_recipes = m.get("n_recipes", 2)
        stock = m.get("stock_max", 3) + 1
        h = m.get("h_max", 3) + 1
        return stock ** 3 * h * (n_recipes + 1) ** 2


def preset_dir() -> Path:
    return Path(__file__).parent / "presets"


def list_presets():
    return sorted(p.stem for p in preset_dir().glob("*.json"))


def load_preset(name) -> ExperimentPreset:
    path = Path(name)
    if not path.exists():
        path = preset_dir() / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"no preset named {name!r}; "
                                f"available: {list_presets()}")
    with open(path) as fh:
        return ExperimentPreset.from_dict(json.load(fh))


def update_histogram(counter: UpdateCounter, path) -> Path:
    """Per-pair update counts as CSV (state, action, updates)."""
    path = Path(path)
    counts = counter.counts
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "action", "updates"])
        for s in range(counts.shape[0]):
            for a in range(counts.shape[1]):
                w.writerow([s, a, int(counts[s, a])])
    return path


def _resolve_n_path(preset, model):
    if preset.n_path:
        return int(preset.n_path)
    if preset.n_path_per_cell:
        raw = preset.n_path_per_cell * model.n_states * model.n_actions
        j = model.n_actions
        return int(np.ceil(raw / j) * j)
    raise ValueError("preset needs n_path or n_path_per_cell")


def _run_cell(args):
    (model, theta, fs, engine, t_end, n_path, start_rule, reps, seed,
     theta0, max_fevals, share) = args
    return replicate(model, theta, fs, engine, t_end=t_end, n_path=n_path,
                     start_rule=start_rule, n_replications=reps,
                     master_seed=seed, theta0=theta0, max_fevals=max_fevals,
                     min_state_share=share)


_TABLE_COLUMNS = ["parameter", "engine", "t_end", "mean", "std", "rmse",
                  "norm_mean", "norm_std", "fevals_mean", "fevals_std",
                  "time_mean", "time_std"]
_FIG1_COLUMNS = ["engine", "t_end", "rmse_rc", "mean_time_s"]
_FIG2_COLUMNS = ["engine", "t_end", "state_action_count", "mean_time_s"]


def run_preset(preset: ExperimentPreset, out_dir, master_seed=None,
               force=False, workers=None) -> dict:
    """Execute the study grid and write the CSV bundle into out_dir.

    Returns a manifest dict (also written as resolved_config.json).
    Per-cell failures are recorded in failures.csv; the bundle completes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = preset.master_seed if master_seed is None else int(master_seed)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))

    bound = preset.size_bound()
    if bound > preset.state_action_cap and not force:
        raise PresetGateError(
            f"preset {preset.name!r} may reach ~{bound} state-action pairs, "
            f"over the cap of {preset.state_action_cap}; pass --force to run"
        )

    engines = preset.engine_configs()
    grid = [(ei, ti) for ei in range(len(engines))
            for ti in range(len(preset.t_end))]

    manifest = {
        "preset": asdict(preset),
        "master_seed": seed,
        "workers": workers,
        "cells": len(grid),
    }
    if not grid:
        _write_rows(out_dir / "table_estimates.csv", _TABLE_COLUMNS, [])
        _write_rows(out_dir / "figure1_rmse_time.csv", _FIG1_COLUMNS, [])
        _write_rows(out_dir / "figure2_time_vs_size.csv", _FIG2_COLUMNS, [])
        _write_rows(out_dir / "failures.csv", ["engine", "t_end", "error"], [])
        with open(out_dir / "resolved_config.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        return manifest

    model, theta = build_model(preset.model)
    if theta is None:
        raise ValueError("preset model config must carry the true theta")
    if model.n_states * model.n_actions > preset.state_action_cap and not force:
        raise PresetGateError(
            f"model has {model.n_states * model.n_actions} state-action "
            f"pairs, over the cap of {preset.state_action_cap}"
        )

    root = np.random.SeedSequence(seed)
    panel_seed, *cell_seeds = root.generate_state(1 + len(grid), np.uint64)

    dp_cfg = FixedPointConfig(
        max_iter=1_000_000 if model.beta > 0.99 else 100_000
    )
    ccps = ccps_from_fixed_point(model, theta, dp_cfg)
    panel = generate_panel(model, ccps, preset.panel_agents,
                           preset.panel_periods, int(panel_seed),
                           config_hash=model_config_hash(model.config_dict()))
    fs = estimate_first_stage(panel, model)
    n_path = _resolve_n_path(preset, model)
    theta0 = preset.theta0_scale * theta.values

    tasks = []
    for idx, (ei, ti) in enumerate(grid):
        tasks.append((model, theta, fs, engines[ei], preset.t_end[ti],
                      n_path, preset.start_rule, preset.replications,
                      int(cell_seeds[idx]), theta0, preset.max_fevals,
                      preset.min_state_share))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = []
        for t in tasks:
            try:
                results.append(_run_cell(t))
            except Exception as exc:
                results.append(exc)

    table_rows, fig1_rows, fig2_rows, failures = [], [], [], []
    sa_count = model.n_states * model.n_actions
    rc_idx = len(model.theta_names) - 1
    for (ei, ti), res in zip(grid, results):
        eng = engines[ei]
        t_end = preset.t_end[ti]
        if isinstance(res, Exception):
            failures.append([eng.label(), t_end,
                             f"{type(res).__name__}: {res}"])
            continue
        stats = res.stat_row()
        for p, pname in enumerate(model.theta_names):
            table_rows.append([
                pname, eng.label(), t_end,
                repr(float(res.mean[p])), repr(float(res.std[p])),
                repr(float(res.rmse[p])),
                repr(stats["norm_mean"]), repr(stats["norm_std"]),
                repr(stats["fevals_mean"]), repr(stats["fevals_std"]),
                repr(stats["time_mean"]), repr(stats["time_std"]),
            ])
        for rep, err in res.failures:
            failures.append([eng.label(), t_end,
                             f"replication {rep}: {err}"])
        fig1_rows.append([eng.label(), t_end,
                          repr(float(res.rmse[rc_idx])),
                          repr(stats["time_mean"])])
        fig2_rows.append([eng.label(), t_end, sa_count,
                          repr(stats["time_mean"])])
        # update-count histogram from one standalone engine run
        hist_paths = simulate_paths(fs, preset.start_rule, t_end, n_path,
                                    int(cell_seeds[ei * len(preset.t_end) + ti]))
        _, counter = run_engine(model, hist_paths, theta, fs, eng)
        slug = eng.label().replace("(alpha=", "_a").replace(")", "")
        update_histogram(counter, out_dir / f"updates_{slug}_t{t_end}.csv")

    _write_rows(out_dir / "table_estimates.csv", _TABLE_COLUMNS, table_rows)
    _write_rows(out_dir / "figure1_rmse_time.csv", _FIG1_COLUMNS, fig1_rows)
    _write_rows(out_dir / "figure2_time_vs_size.csv", _FIG2_COLUMNS, fig2_rows)
    _write_rows(out_dir / "failures.csv", ["engine", "t_end", "error"],
                failures)

    manifest.update({
        "model_resolved": model.config_dict(),
        "theta_true": theta.as_dict(),
        "n_path": n_path,
        "state_action_count": sa_count,
        "panel_seed": int(panel_seed),
        "first_stage_digest": fs.digest(),
        "n_failures": len(failures),
    })
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
