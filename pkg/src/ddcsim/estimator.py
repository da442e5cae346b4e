"""Minimum-distance outer loop: derivative-free search over the utility
parameters minimizing the l2 distance between engine-predicted and
first-stage choice probabilities.

The whole evaluation chain (utility tables, engine pass, softmax, norm)
and the Nelder-Mead simplex itself are compiled, so measured wall times
reflect engine work rather than interpreter overhead; the simplex follows
the standard reflect/expand/contract/shrink rules with absolute x- and
f-tolerances.

The objective is deterministic in theta because one pre-simulated path
set is reused for every evaluation (common random numbers), and the
update pattern of an engine depends only on the path contents, so the
set of eligible states is fixed over the whole search.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .engines import (EngineConfig, _ccs_kernel, _rlmc_kernel, _rltd_kernel,
                      path_cells, run_engine)
from .first_stage import CoverageError, FirstStage
from .models import ModelSpec, Theta, ValueTable, softmax_rows
from .paths import PathSet, simulate_paths

__all__ = ["MdeConfig", "EstimationReport", "ReplicationSummary",
           "PredictedCcps", "predicted_ccps", "objective", "estimate",
           "replicate"]

_ENGINE_ID = {"ccs": 0, "rlmc": 1, "rltd": 2}


@dataclass(frozen=True)
class MdeConfig:
    """Initial guess and simplex settings for one estimation."""

    theta0: np.ndarray
    engine: EngineConfig
    initial_step: float = 0.5
    xatol: float = 1e-6
    fatol: float = 1e-9
    max_fevals: int = 2000
    warm_start: bool = False
    min_state_share: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "theta0", np.asarray(self.theta0, dtype=np.float64)
        )
        if self.xatol <= 0 or self.fatol <= 0 or self.initial_step <= 0:
            raise ValueError("tolerances and the initial step must be positive")
        if self.max_fevals < 1:
            raise ValueError("max_fevals must be at least 1")


@dataclass
class EstimationReport:
    """Outcome of one minimum-distance estimation."""

    theta_names: tuple
    theta_hat: np.ndarray
    final_norm: float
    n_fevals: int
    wall_seconds: float
    engine: str
    t_end: int
    n_path: int
    replication_id: int = 0
    converged: bool = True
    n_excluded_states: int = 0
    coverage_warning: bool = False

    def theta_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.theta_names, self.theta_hat)}

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_dict(),
            "final_norm": self.final_norm,
            "n_fevals": self.n_fevals,
            "wall_seconds": self.wall_seconds,
            "engine": self.engine,
            "t_end": self.t_end,
            "n_path": self.n_path,
            "replication_id": self.replication_id,
            "converged": self.converged,
            "n_excluded_states": self.n_excluded_states,
            "coverage_warning": self.coverage_warning,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass
class PredictedCcps:
    """Softmax of the value table over the eligible states."""

    states: np.ndarray  # (E,)
    ccp: np.ndarray  # (E, J)
    n_excluded: int
    coverage_warning: bool


def predicted_ccps(table: ValueTable, visited_states,
                   updated_mask=None) -> PredictedCcps:
    """Row-wise logit mapping restricted to eligible states.

    Eligible states were visited in the panel and had every action's value
    updated at least once during the run; visited states failing the
    update requirement are excluded and counted, and a coverage warning is
    set once exclusions pass 20% of the visited states.  An empty eligible
    set raises CoverageError rather than producing a silent zero norm.
    """
    visited = np.asarray(visited_states, dtype=np.int64)
    if updated_mask is None:
        updated_mask = table.meta.get("updated")
    if updated_mask is None:  # e.g. a solver table: every entry is exact
        updated_mask = np.ones(table.values.shape, dtype=bool)
    fully = updated_mask.all(axis=1)
    keep = fully[visited]
    eligible = visited[keep]
    n_excluded = int(len(visited) - len(eligible))
    if len(eligible) == 0:
        raise CoverageError("no visited state has all action values updated")
    warn = n_excluded > 0.2 * len(visited)
    return PredictedCcps(eligible, softmax_rows(table.values[eligible]),
                         n_excluded, warn)


# -- compiled evaluation chain ---------------------------------------------------


@njit(cache=True)
def _td1_sweep(cells, u, brew, beta, alpha, sweeps, v):
    """Counter-free 1-step TD pass; brew[i] = beta * (gamma - log pihat).

    Carries the current pair's value across steps so each update costs
    three gathers and one store.
    """
    n_path, t_end = cells.shape
    for _ in range(sweeps):
        for k in range(n_path):
            i1 = cells[k, 0]
            vc = v[i1]
            for t in range(1, t_end):
                i2 = cells[k, t]
                vn = v[i2]
                nv = vc + alpha * (u[i1] + brew[i2] + beta * vn - vc)
                v[i1] = nv
                vc = nv if i2 == i1 else vn
                i1 = i2


@njit(cache=True)
def _objective_kernel(theta, feats, offset, logpi, cells, beta,
                      gamma, alpha, n_step, sweeps, engine_id, elig, pihat,
                      v, counts, u, rew, warm):
    n_cells = offset.shape[0]
    n_actions = pihat.shape[1]
    P = theta.shape[0]
    for i in range(n_cells):
        acc = offset[i]
        for p in range(P):
            acc += feats[i, p] * theta[p]
        u[i] = acc
        rew[i] = acc + gamma - logpi[i]
    if not warm:
        v[:] = 0.0
    if engine_id == 0:
        counts[:] = 0
        _ccs_kernel(cells, u, rew, beta, v, counts)
    elif engine_id == 1:
        counts[:] = 0
        _rlmc_kernel(cells, u, rew, beta, v, counts, False)
    elif n_step == 1:
        # rew doubles as the brew table; the shock-mean part is rew - u
        for i in range(n_cells):
            rew[i] = beta * (rew[i] - u[i])
        _td1_sweep(cells, u, rew, beta, alpha, sweeps, v)
    else:
        counts[:] = 0
        _rltd_kernel(cells, u, rew, beta, alpha, n_step, sweeps, v, counts)
    sq = 0.0
    for e in range(elig.shape[0]):
        base = elig[e] * n_actions
        m = v[base]
        for a in range(1, n_actions):
            if v[base + a] > m:
                m = v[base + a]
        denom = 0.0
        for a in range(n_actions):
            denom += np.exp(v[base + a] - m)
        for a in range(n_actions):
            d = np.exp(v[base + a] - m) / denom - pihat[e, a]
            sq += d * d
    return np.sqrt(sq)


@njit(cache=True)
def _nm_kernel(x0, step, xatol, fatol, maxfev,
               feats, offset, logpi, cells, beta, gamma, alpha,
               n_step, sweeps, engine_id, elig, pihat, v, counts, u, rew,
               warm):
    """Nelder-Mead simplex; returns (x_best, f_best, n_fevals, converged).

    Standard reflect/expand/contract/shrink coefficients (1, 2, .5, .5);
    terminates when both the simplex diameter and the f spread fall under
    the absolute tolerances.  Allocation-free inside the loop.
    """
    P = x0.shape[0]
    n_vert = P + 1
    sim = np.empty((n_vert, P))
    fsim = np.empty(n_vert)
    tmp = np.empty(P)
    centroid = np.empty(P)
    xr = np.empty(P)
    xe = np.empty(P)

    sim[0] = x0
    fsim[0] = _objective_kernel(x0, feats, offset, logpi, cells,
                                beta, gamma, alpha, n_step, sweeps, engine_id,
                                elig, pihat, v, counts, u, rew, warm)
    nfev = 1
    for i in range(P):
        for c in range(P):
            tmp[c] = x0[c]
        tmp[i] += step
        sim[i + 1] = tmp
        fsim[i + 1] = _objective_kernel(tmp, feats, offset, logpi, cells, beta, gamma, alpha, n_step,
                                        sweeps, engine_id, elig, pihat,
                                        v, counts, u, rew, warm)
        nfev += 1

    rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5
    converged = False
    while nfev < maxfev:
        # insertion sort of the few vertices by objective value
        for i in range(1, n_vert):
            fkey = fsim[i]
            for c in range(P):
                tmp[c] = sim[i, c]
            j = i - 1
            while j >= 0 and fsim[j] > fkey:
                fsim[j + 1] = fsim[j]
                for c in range(P):
                    sim[j + 1, c] = sim[j, c]
                j -= 1
            fsim[j + 1] = fkey
            for c in range(P):
                sim[j + 1, c] = tmp[c]

        max_f = 0.0
        max_x = 0.0
        for i in range(1, n_vert):
            df = abs(fsim[i] - fsim[0])
            if df > max_f:
                max_f = df
            for c in range(P):
                dx = abs(sim[i, c] - sim[0, c])
                if dx > max_x:
                    max_x = dx
        if max_x <= xatol and max_f <= fatol:
            converged = True
            break

        for c in range(P):
            acc = 0.0
            for i in range(n_vert - 1):
                acc += sim[i, c]
            centroid[c] = acc / (n_vert - 1)

        for c in range(P):
            xr[c] = centroid[c] + rho * (centroid[c] - sim[n_vert - 1, c])
        fr = _objective_kernel(xr, feats, offset, logpi, cells,
                               beta, gamma, alpha, n_step, sweeps, engine_id,
                               elig, pihat, v, counts, u, rew, warm)
        nfev += 1
        shrink = False
        if fr < fsim[0]:
            for c in range(P):
                xe[c] = centroid[c] + rho * chi * (centroid[c]
                                                   - sim[n_vert - 1, c])
            fe = _objective_kernel(xe, feats, offset, logpi, cells,
                                   beta, gamma, alpha, n_step, sweeps,
                                   engine_id, elig, pihat, v, counts, u, rew,
                                   warm)
            nfev += 1
            if fe < fr:
                sim[n_vert - 1] = xe
                fsim[n_vert - 1] = fe
            else:
                sim[n_vert - 1] = xr
                fsim[n_vert - 1] = fr
        elif fr < fsim[n_vert - 2]:
            sim[n_vert - 1] = xr
            fsim[n_vert - 1] = fr
        else:
            if fr < fsim[n_vert - 1]:
                # outside contraction
                for c in range(P):
                    xe[c] = centroid[c] + psi * rho * (centroid[c]
                                                       - sim[n_vert - 1, c])
                fc = _objective_kernel(xe, feats, offset, logpi, cells, beta, gamma, alpha, n_step,
                                       sweeps, engine_id, elig, pihat,
                                       v, counts, u, rew, warm)
                nfev += 1
                if fc <= fr:
                    sim[n_vert - 1] = xe
                    fsim[n_vert - 1] = fc
                else:
                    shrink = True
            else:
                # inside contraction
                for c in range(P):
                    xe[c] = centroid[c] - psi * (centroid[c]
                                                 - sim[n_vert - 1, c])
                fcc = _objective_kernel(xe, feats, offset, logpi, cells, beta, gamma, alpha, n_step,
                                        sweeps, engine_id, elig, pihat,
                                        v, counts, u, rew, warm)
                nfev += 1
                if fcc < fsim[n_vert - 1]:
                    sim[n_vert - 1] = xe
                    fsim[n_vert - 1] = fcc
                else:
                    shrink = True
        if shrink:
            for i in range(1, n_vert):
                if nfev >= maxfev:
                    break
                for c in range(P):
                    sim[i, c] = sim[0, c] + sigma * (sim[i, c] - sim[0, c])
                fsim[i] = _objective_kernel(sim[i], feats, offset, logpi,
                                            cells, beta, gamma,
                                            alpha, n_step, sweeps, engine_id,
                                            elig, pihat, v, counts, u, rew,
                                            warm)
                nfev += 1

    best = 0
    for i in range(1, n_vert):
        if fsim[i] < fsim[best]:
            best = i
    return sim[best], fsim[best], nfev, converged


class MdeWorkspace:
    """Arrays and eligibility for repeated objective evaluations.

    min_state_share additionally drops states carrying less than that
    share of the panel records from the stacked norm; their choice rows
    are too noisy to inform the fit, though their values still converge
    (they keep starting paths).
    """

    def __init__(self, model: ModelSpec, first_stage: FirstStage,
                 paths: PathSet, engine: EngineConfig, min_state_share=0.0):
        self.model = model
        self.engine = engine
        n_cells = model.n_states * model.n_actions
        self.feats = np.ascontiguousarray(
            model.utility_features().reshape(n_cells, model.n_params))
        self.offset = np.ascontiguousarray(model.utility_offset().ravel())
        self.logpi = np.ascontiguousarray(first_stage.log_ccp.ravel())
        self.cells = np.ascontiguousarray(path_cells(paths))
        self.t_end = paths.t_end
        self.n_path = paths.n_path
        self.v = np.zeros(n_cells)
        self.counts = np.zeros(n_cells, dtype=np.int64)
        self.u_work = np.zeros(n_cells)
        self.rew_work = np.zeros(n_cells)

        # the update pattern is theta-independent, so one probe run pins
        # the eligible states for the whole search; on top of the generic
        # visited + fully-updated rule, eligibility is restricted to states
        # whose every action starts a path, which makes the stacked cells
        # identical across engines run on the same path set and keeps
        # barely-updated cells out of the norm
        zero = model.theta(np.zeros(model.n_params))
        table, counter = run_engine(model, paths, zero, first_stage, engine)
        started = np.zeros(n_cells, dtype=bool)
        started[np.unique(self.cells[:, 0])] = True
        full_start = started.reshape(model.n_states, model.n_actions).all(axis=1)
        visited = first_stage.visited_states()
        min_count = min_state_share * first_stage.state_counts.sum()
        well_visited = first_stage.state_counts >= min_count
        updated = (counter.counts > 0) & (full_start & well_visited)[:, None]
        pred = predicted_ccps(table, visited, updated)
        self.elig = pred.states
        self.n_excluded = pred.n_excluded
        self.coverage_warning = pred.coverage_warning
        self.pihat = np.ascontiguousarray(first_stage.ccp[self.elig])

    def _args(self, warm=False):
        e = self.engine
        return (self.feats, self.offset, self.logpi, self.cells,
                self.model.beta, e.gamma, e.alpha, e.n_step, e.sweeps,
                _ENGINE_ID[e.kind], self.elig, self.pihat, self.v, self.counts,
                self.u_work, self.rew_work, warm)

    def objective(self, theta_values) -> float:
        theta = np.asarray(theta_values, dtype=np.float64)
        return float(_objective_kernel(theta, *self._args()))

    def minimize(self, cfg: MdeConfig):
        x0 = np.asarray(cfg.theta0, dtype=np.float64)
        if x0.shape != (self.model.n_params,):
            raise ValueError("theta0 has the wrong length for this model")
        return _nm_kernel(x0, cfg.initial_step, cfg.xatol, cfg.fatol,
                          cfg.max_fevals, *self._args(cfg.warm_start))


def objective(model: ModelSpec, theta_values, paths: PathSet,
              first_stage: FirstStage, engine: EngineConfig) -> float:
    """Euclidean norm of (predicted - estimated) CCPs over eligible cells."""
    ws = MdeWorkspace(model, first_stage, paths, engine)
    return ws.objective(theta_values)


def estimate(model: ModelSpec, first_stage: FirstStage, paths: PathSet,
             cfg: MdeConfig, replication_id=0) -> EstimationReport:
    """Run the simplex to convergence or the feval cap.

    The reported wall time wraps the optimizer loop only; workspace
    assembly and a short warm-up (which also absorbs one-time kernel
    compilation) are excluded.
    """
    ws = MdeWorkspace(model, first_stage, paths, cfg.engine,
                      cfg.min_state_share)
    ws.minimize(MdeConfig(cfg.theta0, cfg.engine, cfg.initial_step,
                          cfg.xatol, cfg.fatol, max_fevals=2))
    ws.v[:] = 0.0

    t0 = time.perf_counter()
    x_best, f_best, nfev, converged = ws.minimize(cfg)
    wall = time.perf_counter() - t0
    return EstimationReport(
        theta_names=model.theta_names,
        theta_hat=np.asarray(x_best),
        final_norm=float(f_best),
        n_fevals=int(nfev),
        wall_seconds=wall,
        engine=cfg.engine.label(),
        t_end=ws.t_end,
        n_path=ws.n_path,
        replication_id=replication_id,
        converged=bool(converged),
        n_excluded_states=ws.n_excluded,
        coverage_warning=ws.coverage_warning,
    )


@dataclass
class ReplicationSummary:
    """Per-parameter recovery statistics over replications.

    std and rmse use the population convention (ddof=0) so that
    rmse^2 = bias^2 + variance holds as an exact identity.
    """

    theta_names: tuple
    theta_true: np.ndarray
    estimates: np.ndarray  # (R, P)
    norms: np.ndarray
    fevals: np.ndarray
    times: np.ndarray
    reports: list
    failures: list = field(default_factory=list)

    @property
    def n_replications(self) -> int:
        return self.estimates.shape[0]

    @property
    def partial(self) -> bool:
        return len(self.failures) > 0

    @property
    def mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.estimates.std(axis=0)

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(((self.estimates - self.theta_true) ** 2).mean(axis=0))

    def stat_row(self) -> dict:
        return {
            "norm_mean": float(self.norms.mean()),
            "norm_std": float(self.norms.std()),
            "fevals_mean": float(self.fevals.mean()),
            "fevals_std": float(self.fevals.std()),
            "time_mean": float(self.times.mean()),
            "time_std": float(self.times.std()),
        }


def replicate(model: ModelSpec, theta_true: Theta, first_stage: FirstStage,
              engine: EngineConfig, t_end, n_path, start_rule,
              n_replications, master_seed, theta0=None,
              max_fevals=2000, min_state_share=0.0) -> ReplicationSummary:
    """Estimate on n_replications independently simulated path sets.

    Path seeds derive from the master seed by replication index.  A failed
    replication is recorded and skipped, never fatal; the summary is then
    marked partial.  theta0 defaults to 1.5x the true vector.
    """
    model.check_theta(theta_true)
    if theta0 is None:
        theta0 = 1.5 * theta_true.values
    rep_seeds = np.random.SeedSequence(master_seed).generate_state(
        n_replications, np.uint64
    )
    reports, failures = [], []
    for rep in range(n_replications):
        try:
            paths = simulate_paths(first_stage, start_rule, t_end, n_path,
                                   int(rep_seeds[rep]))
            cfg = MdeConfig(theta0, engine, max_fevals=max_fevals,
                            min_state_share=min_state_share)
            reports.append(estimate(model, first_stage, paths, cfg,
                                    replication_id=rep))
        except Exception as exc:  # record, keep going
            failures.append((rep, f"{type(exc).__name__}: {exc}"))
    if not reports:
        raise RuntimeError(f"all {n_replications} replications failed: {failures}")
    return ReplicationSummary(
        theta_names=model.theta_names,
        theta_true=theta_true.values.copy(),
        estimates=np.array([r.theta_hat for r in reports]),
        norms=np.array([r.final_norm for r in reports]),
        fevals=np.array([r.n_fevals for r in reports], dtype=np.float64),
        times=np.array([r.wall_seconds for r in reports]),
        reports=reports,
        failures=failures,
    )
