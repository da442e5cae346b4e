"""The four interchangeable inner-loop value computations.

All engines consume a fixed pre-simulated PathSet and a first-stage
estimate, and produce a dense choice-specific value table together with
per-pair update counts.  Per-step rewards along a path are

    r(s, a) = u(s, a; theta) + g - log pi-hat(a | s),

the flow utility plus the conditional mean of the choice shock.

ccs_values    averages each path's full discounted return into its start
              pair (one update per path, weight 1/visits).
rlmc_values   every-visit Monte Carlo: peels the start pair off the full
              return recursively, updating every pair visited along the
              path with its sub-path return (T_end updates per path).
rltd_values   n-step temporal difference: updates each of the first
              T_end - n pairs of a path with a look-ahead error
              bootstrapped on the latest table entries, constant weight
              alpha.

Updates are applied strictly path-major, step-ascending, on-line; a run
is single-threaded and bit-deterministic given its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .first_stage import CoverageError, FirstStage
from .models import EULER_GAMMA, ModelSpec, Theta, ValueTable
from .paths import PathSet

__all__ = ["EngineConfig", "UpdateCounter", "reward_term", "ccs_values",
           "rlmc_values", "rltd_values", "run_engine", "ENGINE_KINDS"]

ENGINE_KINDS = ("ccs", "rlmc", "rltd")


@dataclass(frozen=True)
class EngineConfig:
    """Which engine to run and its learning settings.

    alpha and n_step only matter for the temporal-difference engine;
    sweeps > 1 repeats the pass over the path set (used by convergence
    studies, never by the benchmark presets).  gamma is the shock-mean
    constant, overridable so analytic fixtures can switch it off.
    """

    kind: str = "ccs"
    alpha: float = 0.5
    n_step: int = 1
    gamma: float = EULER_GAMMA
    sweeps: int = 1

    def __post_init__(self):
        if self.kind not in ENGINE_KINDS:
            raise ValueError(f"unknown engine kind {self.kind!r}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.n_step < 1:
            raise ValueError("n_step must be at least 1")
        if self.sweeps < 1:
            raise ValueError("sweeps must be at least 1")

    def label(self) -> str:
        if self.kind == "rltd":
            return f"rltd{self.n_step}(alpha={self.alpha:g})"
        return self.kind


@dataclass
class UpdateCounter:
    """Per-pair update counts accumulated during one engine run."""

    counts: np.ndarray  # (S, J) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def reward_term(model: ModelSpec, s, a, theta: Theta,
                first_stage: FirstStage, gamma=EULER_GAMMA) -> float:
    """u(s, a; theta) + gamma - log pi-hat(a | s) for one non-initial step."""
    if not first_stage.has_ccp(s):
        raise CoverageError(f"no choice-probability row for state {s}")
    return model.flow_utility(s, a, theta) + gamma - float(
        first_stage.log_ccp[s, a]
    )


# -- kernels -------------------------------------------------------------------


#
# Kernels index flattened (state * J + action) cell streams and flat
# (S * J,) tables; the wrappers handle the reshaping.


@njit(cache=True)
def _ccs_kernel(cells, u, rew, beta, v, counts):
    n_path, t_end = cells.shape
    for k in range(n_path):
        i0 = cells[k, 0]
        g = u[i0]
        bp = 1.0
        for t in range(1, t_end):
            bp *= beta
            g += bp * rew[cells[k, t]]
        counts[i0] += 1
        v[i0] += (g - v[i0]) / counts[i0]


@njit(cache=True)
def _rlmc_kernel(cells, u, rew, beta, v, counts, start_only):
    n_path, t_end = cells.shape
    for k in range(n_path):
        i0 = cells[k, 0]
        g = u[i0]
        bp = 1.0
        for t in range(1, t_end):
            bp *= beta
            g += bp * rew[cells[k, t]]
        counts[i0] += 1
        v[i0] += (g - v[i0]) / counts[i0]
        if start_only:
            continue
        prev = i0
        for t in range(1, t_end):
            it = cells[k, t]
            # peel the previous step off the return and undiscount:
            # G <- (G - u_prev - beta * (g - log pi)) / beta
            g = (g - u[prev] - beta * (rew[it] - u[it])) / beta
            counts[it] += 1
            v[it] += (g - v[it]) / counts[it]
            prev = it


@njit(cache=True)
def _rltd_kernel(cells, u, rew, beta, alpha, n_step, sweeps, v, counts):
    n_path, t_end = cells.shape
    bp = np.empty(n_step + 1)
    bp[0] = 1.0
    for i in range(1, n_step + 1):
        bp[i] = bp[i - 1] * beta
    for _ in range(sweeps):
        for k in range(n_path):
            for t in range(t_end - n_step):
                i0 = cells[k, t]
                delta = u[i0] - v[i0]
                for j in range(1, n_step):
                    delta += bp[j] * rew[cells[k, t + j]]
                inext = cells[k, t + n_step]
                # shock mean of the bootstrap step plus the latest table entry
                delta += bp[n_step] * (rew[inext] - u[inext] + v[inext])
                v[i0] += alpha * delta
                counts[i0] += 1


# -- public wrappers -------------------------------------------------------------


def _tables(model, theta, first_stage, gamma):
    model.check_theta(theta)
    u = model.utility_table(theta)
    with np.errstate(invalid="ignore"):
        rew = u + gamma - first_stage.log_ccp
    return u, rew


def path_cells(paths: PathSet) -> np.ndarray:
    """Flattened state * J + action stream, shape (N_path, T_end)."""
    return (paths.states.astype(np.int32) * paths.n_actions
            + paths.actions.astype(np.int32))


def _check_coverage(paths: PathSet, first_stage: FirstStage):
    if paths.n_states != first_stage.n_states or \
            paths.n_actions != first_stage.n_actions:
        raise ValueError("path set and first stage disagree on the state space")
    seen = np.unique(paths.states)
    missing = seen[first_stage.state_counts[seen] == 0]
    if len(missing):
        raise CoverageError(
            f"paths visit states with no first-stage estimate: {missing[:5]}"
        )


def _finish(model, paths, theta, cfg, v, counts):
    if not np.all(np.isfinite(v)):
        raise ValueError("engine produced non-finite values")
    table = ValueTable(
        v,
        meta={
            "engine": cfg.label(),
            "theta": theta.as_dict(),
            "path_seed": paths.seed,
            "t_end": paths.t_end,
            "n_path": paths.n_path,
            "updated": counts > 0,
        },
    )
    return table, UpdateCounter(counts)


def ccs_values(model: ModelSpec, paths: PathSet, theta: Theta,
               first_stage: FirstStage, cfg: EngineConfig = None):
    """Start-pair averaging of full-path discounted returns.

    Exactly one update per path; pairs never used as a start keep the zero
    initialization (flagged through the counter / the table's updated mask).
    """
    cfg = cfg or EngineConfig(kind="ccs")
    _check_coverage(paths, first_stage)
    u, rew = _tables(model, theta, first_stage, cfg.gamma)
    v = np.zeros_like(u)
    counts = np.zeros(u.shape, dtype=np.int64)
    _ccs_kernel(path_cells(paths), u.ravel(), rew.ravel(), model.beta,
                v.ravel(), counts.ravel())
    return _finish(model, paths, theta, cfg, v, counts)


def rlmc_values(model: ModelSpec, paths: PathSet, theta: Theta,
                first_stage: FirstStage, cfg: EngineConfig = None):
    """Every-visit sub-path averaging; one update per visited step.

    Visit counts persist across paths within the run, so the weight on
    each update is 1/(total visits of that pair so far).
    """
    cfg = cfg or EngineConfig(kind="rlmc")
    if model.beta < 1e-6:
        raise ValueError("beta below 1e-6 makes the return recursion unstable")
    _check_coverage(paths, first_stage)
    u, rew = _tables(model, theta, first_stage, cfg.gamma)
    v = np.zeros_like(u)
    counts = np.zeros(u.shape, dtype=np.int64)
    _rlmc_kernel(path_cells(paths), u.ravel(), rew.ravel(), model.beta,
                 v.ravel(), counts.ravel(), False)
    return _finish(model, paths, theta, cfg, v, counts)


def rltd_values(model: ModelSpec, paths: PathSet, theta: Theta,
                first_stage: FirstStage, cfg: EngineConfig = None):
    """n-step temporal-difference updates bootstrapped on the live table."""
    cfg = cfg or EngineConfig(kind="rltd")
    if cfg.n_step > paths.t_end - 1:
        raise ValueError(
            f"n_step={cfg.n_step} needs paths longer than {cfg.n_step + 1}"
        )
    _check_coverage(paths, first_stage)
    u, rew = _tables(model, theta, first_stage, cfg.gamma)
    v = np.zeros_like(u)
    counts = np.zeros(u.shape, dtype=np.int64)
    _rltd_kernel(path_cells(paths), u.ravel(), rew.ravel(), model.beta,
                 cfg.alpha, cfg.n_step, cfg.sweeps, v.ravel(), counts.ravel())
    return _finish(model, paths, theta, cfg, v, counts)


def run_engine(model, paths, theta, first_stage, cfg: EngineConfig):
    """Dispatch on cfg.kind; returns (ValueTable, UpdateCounter)."""
    fn = {"ccs": ccs_values, "rlmc": rlmc_values, "rltd": rltd_values}[cfg.kind]
    return fn(model, paths, theta, first_stage, cfg)
