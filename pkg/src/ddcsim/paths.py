"""Pre-simulated forward path sets and their on-disk format.

Paths are rolled out from first-stage estimates: the initial (state,
action) pair of each path is forced by the start rule, and subsequent
steps draw the state from p-hat and the action from pi-hat.  Draws are
restricted to the empirically observed, continuable support so a rolled
path never leaves first-stage coverage; the floored tables are used by
the reward terms, not the sampler.

Start rules
-----------
``all-pairs``   every visited (s, a) pair begins n_path / n_pairs paths,
                pinning every pair's value by start-pair averaging; starts
                are laid out in interleaved rounds, not per-pair blocks.
``bootstrap``   start states are drawn with replacement from the observed
                panel states (visit-count weighted), and each drawn state
                emits one path per forced initial action, so all J values
                at a sampled state are pinned.

Binary format (little-endian, 64-byte header):
  magic "DDCP" | u16 version | u16 pad | u32 S, J, T_end, N_path |
  u64 seed | 32-byte SHA-256 of the payload | payload of u32
  (state, action) pairs, path-major.
A JSON sidecar (<file>.meta.json) carries the start-rule descriptor and
the first-stage digest, which have no room in the fixed header.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .first_stage import CoverageError, FirstStage

__all__ = ["PathSet", "PathFormatError", "simulate_paths", "write_paths",
           "read_paths", "export_paths_csv", "binary_size", "HEADER_SIZE"]

MAGIC = b"DDCP"
VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<4sHHIIIIQ32s")
_CHUNK = 8192


class PathFormatError(ValueError):
    """Path file failed magic, version, or checksum verification."""


@dataclass
class PathSet:
    """N_path forward paths of T_end (state, action) pairs each."""

    states: np.ndarray  # (N_path, T_end) int32
    actions: np.ndarray  # (N_path, T_end) int32
    n_states: int
    n_actions: int
    start_rule: str
    seed: int
    first_stage_hash: str

    @property
    def n_path(self) -> int:
        return self.states.shape[0]

    @property
    def t_end(self) -> int:
        return self.states.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, PathSet)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and (self.n_states, self.n_actions, self.start_rule, self.seed,
                 self.first_stage_hash)
            == (other.n_states, other.n_actions, other.start_rule, other.seed,
                other.first_stage_hash)
        )


def binary_size(n_path, t_end) -> int:
    return HEADER_SIZE + n_path * t_end * 8


# -- simulation ----------------------------------------------------------------


@njit(cache=True)
def _roll_paths(u01, act_cdf_mid, act_cdf_final, t_indptr, t_indices, t_cdf,
                states, actions):
    """Fill states/actions from column 1 on; returns (path, t, state) of the
    first dead end hit, or (-1, -1, -1)."""
    n_path, t_end = states.shape
    n_actions = act_cdf_mid.shape[1]
    for k in range(n_path):
        s = states[k, 0]
        a = actions[k, 0]
        for t in range(1, t_end):
            row = s * n_actions + a
            lo = t_indptr[row]
            hi = t_indptr[row + 1]
            if hi == lo:
                return k, t, s
            us = u01[k, t - 1, 0]
            j = lo
            while j < hi - 1 and us > t_cdf[j]:
                j += 1
            s = t_indices[j]
            cdf = act_cdf_final if t == t_end - 1 else act_cdf_mid
            if cdf[s, n_actions - 1] <= 0.0:
                return k, t, s
            ua = u01[k, t - 1, 1]
            a = 0
            while a < n_actions - 1 and ua > cdf[s, a]:
                a += 1
            states[k, t] = s
            actions[k, t] = a
    return -1, -1, -1


def _sampling_tables(fs: FirstStage):
    """Per-state action CDFs and per-pair successor CDFs over observed support."""
    S, J = fs.n_states, fs.n_actions
    act_mid = np.zeros((S, J))
    act_final = np.zeros((S, J))
    for s in fs.visited_states():
        act_final[s] = np.cumsum(fs.ccp[s])
        cont = fs.continuable_actions(s)
        if len(cont):
            p = np.zeros(J)
            p[cont] = fs.ccp[s, cont]
            act_mid[s] = np.cumsum(p / p.sum())
    t_cdf = np.empty_like(fs.trans_probs)
    for row in range(S * J):
        lo, hi = fs.trans_indptr[row], fs.trans_indptr[row + 1]
        if hi > lo:
            p = fs.trans_probs[lo:hi]
            t_cdf[lo:hi] = np.cumsum(p / p.sum())
    return act_mid, act_final, t_cdf


def _build_starts(fs: FirstStage, start_rule, n_path, rng):
    J = fs.n_actions
    if start_rule == "all-pairs":
        pairs = np.argwhere(fs.pair_counts > 0)
        if len(pairs) == 0:
            raise ValueError("no visited pairs to start from")
        if n_path % len(pairs) != 0:
            raise ValueError(
                f"n_path={n_path} is not a multiple of the {len(pairs)} visited pairs"
            )
        r = n_path // len(pairs)
        # interleaved rounds (every pair once per round) rather than r-blocks
        # per pair: on-line engines process paths in file order, and blocked
        # starts leave large order-dependent transients in their tables
        starts = np.tile(pairs, (r, 1))
    elif start_rule == "bootstrap":
        if n_path % J != 0:
            raise ValueError(f"n_path={n_path} is not a multiple of J={J}")
        visited = fs.visited_states()
        full = np.array([s for s in visited
                         if len(fs.continuable_actions(s)) == J], dtype=np.int64)
        if len(full) == 0:
            raise ValueError("no state has transition rows for every action")
        # uniform over the distinct covered states: every cell the engines
        # may bootstrap through needs starts to converge its value
        drawn = rng.choice(full, size=n_path // J, replace=True)
        starts = np.empty((n_path, 2), dtype=np.int64)
        starts[:, 0] = np.repeat(drawn, J)
        starts[:, 1] = np.tile(np.arange(J), len(drawn))
    else:
        raise ValueError(f"unknown start rule {start_rule!r}")

    for s, a in {(int(s), int(a)) for s, a in starts}:
        if not fs.has_ccp(s) or not fs.has_transition(s, a):
            raise CoverageError(
                f"start pair (s={s}, a={a}) lacks first-stage rows"
            )
    return starts


def simulate_paths(first_stage: FirstStage, start_rule, t_end, n_path,
                   seed) -> PathSet:
    """Roll n_path forward paths of length t_end; deterministic per seed."""
    if t_end < 2:
        raise ValueError("paths need at least two steps")
    fs = first_stage
    root = np.random.SeedSequence(seed)
    ss_starts, ss_steps = root.spawn(2)
    starts = _build_starts(fs, start_rule, n_path,
                           np.random.Generator(np.random.Philox(ss_starts)))
    act_mid, act_final, t_cdf = _sampling_tables(fs)

    states = np.empty((n_path, t_end), dtype=np.int32)
    actions = np.empty((n_path, t_end), dtype=np.int32)
    states[:, 0] = starts[:, 0]
    actions[:, 0] = starts[:, 1]

    # one stream per path, consumed chunk-wise to bound the uniform buffer
    children = ss_steps.spawn(n_path)
    for lo in range(0, n_path, _CHUNK):
        hi = min(lo + _CHUNK, n_path)
        u01 = np.empty((hi - lo, t_end - 1, 2))
        for i in range(lo, hi):
            u01[i - lo] = np.random.Generator(
                np.random.Philox(children[i])).random((t_end - 1, 2))
        bad = _roll_paths(u01, act_mid, act_final, fs.trans_indptr,
                          fs.trans_indices, t_cdf,
                          states[lo:hi], actions[lo:hi])
        if bad[0] >= 0:
            raise CoverageError(
                f"path {lo + bad[0]} hit state {bad[2]} at step {bad[1]} "
                "with no continuable first-stage support"
            )
    return PathSet(states, actions, fs.n_states, fs.n_actions,
                   start_rule, int(seed), fs.digest())


# -- persistence ---------------------------------------------------------------


def _payload(ps: PathSet) -> bytes:
    inter = np.empty((ps.n_path, ps.t_end, 2), dtype="<u4")
    inter[:, :, 0] = ps.states
    inter[:, :, 1] = ps.actions
    return inter.tobytes()


def write_paths(ps: PathSet, path):
    """Binary file plus JSON sidecar; returns bytes written to the binary."""
    path = Path(path)
    payload = _payload(ps)
    header = _HEADER.pack(
        MAGIC, VERSION, 0, ps.n_states, ps.n_actions, ps.t_end, ps.n_path,
        ps.seed & 0xFFFFFFFFFFFFFFFF, hashlib.sha256(payload).digest(),
    )
    assert len(header) == HEADER_SIZE
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump({"start_rule": ps.start_rule,
                   "first_stage_hash": ps.first_stage_hash}, fh, indent=2)
    return HEADER_SIZE + len(payload)


def read_paths(path) -> PathSet:
    """Load and verify a path file written by write_paths."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise PathFormatError("file shorter than the 64-byte header")
    magic, version, _pad, s, j, t_end, n_path, seed, digest = _HEADER.unpack(
        raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise PathFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise PathFormatError(f"unsupported version {version}")
    payload = raw[HEADER_SIZE:]
    if len(payload) != n_path * t_end * 8:
        raise PathFormatError("payload length does not match the header counts")
    if hashlib.sha256(payload).digest() != digest:
        raise PathFormatError("payload checksum mismatch")
    inter = np.frombuffer(payload, dtype="<u4").reshape(n_path, t_end, 2)

    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    return PathSet(
        states=inter[:, :, 0].astype(np.int32),
        actions=inter[:, :, 1].astype(np.int32),
        n_states=s,
        n_actions=j,
        start_rule=meta.get("start_rule", ""),
        seed=int(seed),
        first_stage_hash=meta.get("first_stage_hash", ""),
    )


def export_paths_csv(ps: PathSet, path) -> int:
    """(path, t, state, action) rows for interoperability; returns file size."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "t", "state", "action"])
        for k in range(ps.n_path):
            srow = ps.states[k]
            arow = ps.actions[k]
            w.writerows(
                (k, t, int(srow[t]), int(arow[t])) for t in range(ps.t_end)
            )
    return path.stat().st_size
