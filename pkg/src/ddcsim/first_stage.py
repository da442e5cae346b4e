"""Frequency estimation of choice and transition probabilities from a panel.

Step one of the two-step estimator.  Visited rows are floored at a small
epsilon and renormalized so that downstream log terms stay finite even
for actions never sampled at a visited state; unvisited states carry no
estimate and are flagged rather than fabricated.

Transition rows are stored sparsely: per visited (s, a) pair, the observed
successors with their floored probabilities plus the implied uniform tail
value carried by every off-support state.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelSpec
from .panel import Panel

__all__ = ["FirstStage", "CoverageError", "estimate_ccps",
           "estimate_transitions", "estimate_first_stage", "DEFAULT_FLOOR"]

DEFAULT_FLOOR = 1e-6


class CoverageError(Exception):
    """A required first-stage row (pi-hat or p-hat) is missing."""


@dataclass
class CcpEstimate:
    ccp: np.ndarray  # (S, J), NaN rows for unvisited states
    state_counts: np.ndarray  # (S,)
    pair_counts: np.ndarray  # (S, J)
    floor: float


@dataclass
class TransitionEstimate:
    indptr: np.ndarray  # (S*J + 1,)
    indices: np.ndarray  # observed successors, row-major by s*J + a
    probs: np.ndarray  # floored on-support probabilities
    counts: np.ndarray  # raw successor counts
    tail: np.ndarray  # (S*J,) off-support floor value per pair, 0 if no row
    floor: float


def estimate_ccps(panel: Panel, n_states, n_actions,
                  floor=DEFAULT_FLOOR) -> CcpEstimate:
    """pi-hat(a|s) = count(s,a)/count(s) on visited states, floored."""
    if panel.n_records == 0:
        raise ValueError("cannot estimate choice probabilities from an empty panel")
    flat = panel.states.ravel().astype(np.int64) * n_actions + panel.actions.ravel()
    pair_counts = np.bincount(flat, minlength=n_states * n_actions)
    pair_counts = pair_counts.reshape(n_states, n_actions)
    state_counts = pair_counts.sum(axis=1)

    ccp = np.full((n_states, n_actions), np.nan)
    visited = state_counts > 0
    raw = pair_counts[visited] / state_counts[visited, None]
    q = np.maximum(raw, floor)
    ccp[visited] = q / q.sum(axis=1, keepdims=True)
    return CcpEstimate(ccp, state_counts, pair_counts, floor)


def estimate_transitions(panel: Panel, n_states, n_actions,
                         floor=DEFAULT_FLOOR) -> TransitionEstimate:
    """p-hat(s'|s,a) from consecutive within-agent records, floored."""
    if panel.n_records == 0:
        raise ValueError("cannot estimate transitions from an empty panel")
    s = panel.states[:, :-1].ravel().astype(np.int64)
    a = panel.actions[:, :-1].ravel().astype(np.int64)
    s_next = panel.states[:, 1:].ravel().astype(np.int64)

    pair = s * n_actions + a
    code = pair * n_states + s_next
    uniq, counts = np.unique(code, return_counts=True)
    u_pair = uniq // n_states
    u_next = uniq % n_states

    n_pairs = n_states * n_actions
    indptr = np.zeros(n_pairs + 1, dtype=np.int64)
    np.add.at(indptr, u_pair + 1, 1)
    indptr = np.cumsum(indptr)

    probs = np.empty(len(uniq))
    tail = np.zeros(n_pairs)
    for p in np.unique(u_pair):
        lo, hi = indptr[p], indptr[p + 1]
        c = counts[lo:hi]
        raw = c / c.sum()
        q = np.maximum(raw, floor)
        total = q.sum() + (n_states - (hi - lo)) * floor
        probs[lo:hi] = q / total
        tail[p] = floor / total
    return TransitionEstimate(indptr, u_next.astype(np.int64), probs,
                              counts.astype(np.int64), tail, floor)


@dataclass
class FirstStage:
    """Estimated choice probabilities, transitions and visit counts."""

    n_states: int
    n_actions: int
    floor: float
    ccp: np.ndarray
    state_counts: np.ndarray
    pair_counts: np.ndarray
    trans_indptr: np.ndarray
    trans_indices: np.ndarray
    trans_probs: np.ndarray
    trans_counts: np.ndarray
    trans_tail: np.ndarray
    log_ccp: np.ndarray = field(init=False)

    def __post_init__(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            self.log_ccp = np.log(self.ccp)

    # -- coverage queries ---------------------------------------------------

    def visited_states(self) -> np.ndarray:
        return np.flatnonzero(self.state_counts > 0)

    def has_ccp(self, s) -> bool:
        return bool(self.state_counts[s] > 0)

    def has_transition(self, s, a) -> bool:
        row = s * self.n_actions + a
        return bool(self.trans_indptr[row + 1] > self.trans_indptr[row])

    def continuable_actions(self, s) -> np.ndarray:
        """Actions at s with an estimated transition row."""
        row0 = s * self.n_actions
        lens = self.trans_indptr[row0 + 1:row0 + self.n_actions + 1] \
            - self.trans_indptr[row0:row0 + self.n_actions]
        return np.flatnonzero(lens > 0)

    def transition_row_dense(self, s, a) -> np.ndarray:
        """Floored p-hat(. | s, a) as a dense simplex; raises if no row."""
        row = s * self.n_actions + a
        lo, hi = self.trans_indptr[row], self.trans_indptr[row + 1]
        if hi == lo:
            raise ValueError(f"no transition estimate for pair (s={s}, a={a})")
        dense = np.full(self.n_states, self.trans_tail[row])
        dense[self.trans_indices[lo:hi]] = self.trans_probs[lo:hi]
        return dense

    def transition_support(self, s, a):
        row = s * self.n_actions + a
        lo, hi = self.trans_indptr[row], self.trans_indptr[row + 1]
        return self.trans_indices[lo:hi], self.trans_probs[lo:hi]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.ccp, self.state_counts, self.trans_indptr,
                    self.trans_indices, self.trans_probs):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ccp.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "action", "prob", "count"])
            for s in self.visited_states():
                for a in range(self.n_actions):
                    w.writerow([s, a, repr(float(self.ccp[s, a])),
                                int(self.pair_counts[s, a])])
        with open(out_dir / "transitions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "action", "next_state", "prob", "count"])
            for row in range(self.n_states * self.n_actions):
                lo, hi = self.trans_indptr[row], self.trans_indptr[row + 1]
                s, a = divmod(row, self.n_actions)
                for k in range(lo, hi):
                    w.writerow([s, a, int(self.trans_indices[k]),
                                repr(float(self.trans_probs[k])),
                                int(self.trans_counts[k])])
        meta = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "floor": self.floor,
            "digest": self.digest(),
        }
        with open(out_dir / "first_stage.json", "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, in_dir) -> "FirstStage":
        in_dir = Path(in_dir)
        with open(in_dir / "first_stage.json") as fh:
            meta = json.load(fh)
        n_states, n_actions = meta["n_states"], meta["n_actions"]
        floor = meta["floor"]

        ccp = np.full((n_states, n_actions), np.nan)
        pair_counts = np.zeros((n_states, n_actions), dtype=np.int64)
        with open(in_dir / "ccp.csv") as fh:
            for row in csv.DictReader(fh):
                s, a = int(row["state"]), int(row["action"])
                ccp[s, a] = float(row["prob"])
                pair_counts[s, a] = int(row["count"])
        state_counts = pair_counts.sum(axis=1)

        per_pair = [[] for _ in range(n_states * n_actions)]
        with open(in_dir / "transitions.csv") as fh:
            for row in csv.DictReader(fh):
                pair = int(row["state"]) * n_actions + int(row["action"])
                per_pair[pair].append(
                    (int(row["next_state"]), float(row["prob"]), int(row["count"]))
                )
        indptr = np.zeros(n_states * n_actions + 1, dtype=np.int64)
        indices, probs, counts = [], [], []
        tail = np.zeros(n_states * n_actions)
        for pair, entries in enumerate(per_pair):
            indptr[pair + 1] = indptr[pair] + len(entries)
            if entries:
                idx, p, c = zip(*entries)
                indices.extend(idx)
                probs.extend(p)
                counts.extend(c)
                # off-support mass implied by the floored on-support row
                n_off = n_states - len(entries)
                tail[pair] = (1.0 - sum(p)) / n_off if n_off else 0.0
        fs = cls(
            n_states, n_actions, floor, ccp, state_counts, pair_counts,
            indptr, np.asarray(indices, dtype=np.int64),
            np.asarray(probs), np.asarray(counts, dtype=np.int64), tail,
        )
        return fs


def estimate_first_stage(panel: Panel, model: ModelSpec,
                         floor=DEFAULT_FLOOR) -> FirstStage:
    """Both first-stage estimates assembled from one panel."""
    c = estimate_ccps(panel, model.n_states, model.n_actions, floor)
    t = estimate_transitions(panel, model.n_states, model.n_actions, floor)
    return FirstStage(
        model.n_states, model.n_actions, floor,
        c.ccp, c.state_counts, c.pair_counts,
        t.indptr, t.indices, t.probs, t.counts, t.tail,
    )
