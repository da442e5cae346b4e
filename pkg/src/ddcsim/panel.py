"""Synthetic panel generation: agents simulated under known choice
probabilities and the model transition law.

Each agent owns an independent counter-based random stream derived from
the master seed, so panels are bit-reproducible regardless of how the
agent loop is scheduled.  Records are stored agent-major.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .models import ModelSpec

__all__ = ["Panel", "generate_panel"]


@dataclass
class Panel:
    """Observed (state, action) records for n_agents x n_periods."""

    states: np.ndarray  # (n_agents, n_periods) int32
    actions: np.ndarray  # (n_agents, n_periods) int32
    seed: int
    config_hash: str = ""

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    @property
    def n_periods(self) -> int:
        return self.states.shape[1]

    @property
    def n_records(self) -> int:
        return self.states.size

    def to_records(self) -> np.ndarray:
        """Flat (agent, t, state, action) rows, agent-major."""
        n, t = self.states.shape
        out = np.empty((n * t, 4), dtype=np.int64)
        out[:, 0] = np.repeat(np.arange(n), t)
        out[:, 1] = np.tile(np.arange(t), n)
        out[:, 2] = self.states.ravel()
        out[:, 3] = self.actions.ravel()
        return out

    def save_csv(self, path):
        """Write records plus a .meta.json sidecar with seed and config hash."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent", "t", "state", "action"])
            writer.writerows(self.to_records().tolist())
        meta = {
            "n_agents": self.n_agents,
            "n_periods": self.n_periods,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }
        with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load_csv(cls, path) -> "Panel":
        path = Path(path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        meta = {}
        if meta_path.exists():
            with open(meta_path) as fh:
                meta = json.load(fh)
        n = int(rows[:, 0].max()) + 1
        t = int(rows[:, 1].max()) + 1
        if rows.shape[0] != n * t:
            raise ValueError("panel CSV is not a complete agent x period grid")
        order = np.lexsort((rows[:, 1], rows[:, 0]))
        rows = rows[order]
        return cls(
            states=rows[:, 2].reshape(n, t).astype(np.int32),
            actions=rows[:, 3].reshape(n, t).astype(np.int32),
            seed=int(meta.get("seed", -1)),
            config_hash=meta.get("config_hash", ""),
        )


@njit(cache=True)
def _simulate_agents(u01, ccp_cdf, t_indptr, t_indices, t_cdf, s0,
                     states, actions):
    n_agents, n_periods = states.shape
    n_actions = ccp_cdf.shape[1]
    for i in range(n_agents):
        s = s0
        for t in range(n_periods):
            ua = u01[i, t, 0]
            a = 0
            while a < n_actions - 1 and ua > ccp_cdf[s, a]:
                a += 1
            states[i, t] = s
            actions[i, t] = a
            if t < n_periods - 1:
                row = s * n_actions + a
                lo = t_indptr[row]
                hi = t_indptr[row + 1]
                us = u01[i, t, 1]
                j = lo
                while j < hi - 1 and us > t_cdf[j]:
                    j += 1
                s = t_indices[j]
    return states, actions


def _transition_cdf(model: ModelSpec):
    indptr = [0]
    indices = []
    cdf = []
    for s in range(model.n_states):
        for a in range(model.n_actions):
            idx, p = model.transition_support(s, a)
            indices.append(idx)
            cdf.append(np.cumsum(p))
            indptr.append(indptr[-1] + len(idx))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.concatenate(indices).astype(np.int64),
        np.concatenate(cdf),
    )


def generate_panel(model: ModelSpec, ccps, n_agents, n_periods, seed,
                   initial_state=None, config_hash="") -> Panel:
    """Simulate a panel under the given choice probabilities.

    Every agent starts at ``initial_state`` (the model's canonical new-unit
    state by default); each period the action is drawn from ccps[s] and the
    next state from the model transition law.  Deterministic given seed.
    """
    ccps = np.asarray(ccps, dtype=np.float64)
    if ccps.shape != (model.n_states, model.n_actions):
        raise ValueError("ccp table shape does not match the model")
    row_sums = ccps.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-9) or np.any(ccps < 0):
        raise ValueError("ccp rows must be probability simplices")
    if n_agents < 1 or n_periods < 1:
        raise ValueError("need at least one agent and one period")
    s0 = model.initial_state if initial_state is None else int(initial_state)
    model._check_indices(s0, 0)

    # one Philox stream per agent, derived from the master seed
    root = np.random.SeedSequence(seed)
    u01 = np.empty((n_agents, n_periods, 2))
    for i, child in enumerate(root.spawn(n_agents)):
        u01[i] = np.random.Generator(np.random.Philox(child)).random((n_periods, 2))

    ccp_cdf = np.cumsum(ccps, axis=1)
    t_indptr, t_indices, t_cdf = _transition_cdf(model)
    states = np.empty((n_agents, n_periods), dtype=np.int32)
    actions = np.empty((n_agents, n_periods), dtype=np.int32)
    _simulate_agents(u01, ccp_cdf, t_indptr, t_indices, t_cdf, s0,
                     states, actions)
    return Panel(states=states, actions=actions, seed=int(seed),
                 config_hash=config_hash)
