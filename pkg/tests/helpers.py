"""Shared test fixtures' building blocks: exact-table first stages, a
throwaway tabular model, hand-built path sets, and the pinned study
constants (panel/attribute seeds, the small menu-choice configuration)."""
import numpy as np

from ddcsim import FirstStage
from ddcsim.models import ModelSpec
from ddcsim.paths import PathSet

MACHINE_PANEL_SEED = 7
FOOD_PANEL_SEED = 5
FOOD_ATTR_SEED = 7

FOOD_CASE1A = {
    "kind": "food", "n_recipes": 2, "stock_max": 3, "h_max": 3, "beta": 0.9,
    "attribute_seed": FOOD_ATTR_SEED,
    "theta": {"theta_slt": 0.5, "theta_sug": 0.5, "theta_sat": 0.75,
              "theta_variety": 0.1, "theta_skip": 5.0},
}


def first_stage_from_tables(model, ccp, floor=1e-6) -> FirstStage:
    """Synthetic first stage built from oracle tables.

    Every state counts as massively visited and every pair has the exact
    model transition row, so engines can be checked against the dynamic
    programming solution without sampling noise.  floor=0 keeps the choice
    rows exactly as given.
    """
    S, J = model.n_states, model.n_actions
    ccp = np.asarray(ccp, dtype=np.float64)
    if floor > 0:
        q = np.maximum(ccp, floor)
        ccp = q / q.sum(axis=1, keepdims=True)
    big = 10 ** 9
    pair_counts = np.maximum((ccp * big).astype(np.int64), 1)
    indptr = np.zeros(S * J + 1, dtype=np.int64)
    indices, probs, counts = [], [], []
    tail = np.zeros(S * J)
    for s in range(S):
        for a in range(J):
            row = s * J + a
            idx, p = model.transition_support(s, a)
            if floor > 0:
                q = np.maximum(p, floor)
                total = q.sum() + (S - len(idx)) * floor
                p = q / total
                tail[row] = floor / total
            indices.extend(idx)
            probs.extend(p)
            counts.extend([big] * len(idx))
            indptr[row + 1] = indptr[row] + len(idx)
    return FirstStage(
        S, J, floor, ccp, pair_counts.sum(axis=1), pair_counts,
        indptr, np.asarray(indices, dtype=np.int64), np.asarray(probs),
        np.asarray(counts, dtype=np.int64), tail,
    )


class TableModel(ModelSpec):
    """Tiny deterministic model with explicit utility and successor tables.

    The flow utility is theta-independent (zero feature tensor with one
    dummy parameter), which is all the engine fixtures need.
    """

    kind = "table"

    def __init__(self, u_table, successors, beta):
        u_table = np.asarray(u_table, dtype=np.float64)
        successors = np.asarray(successors, dtype=np.int64)
        super().__init__(u_table.shape[0], u_table.shape[1], beta, ("dummy",))
        self._offset = u_table
        self._features = np.zeros(u_table.shape + (1,))
        self._successors = successors

    def config_dict(self):
        return {"kind": "table"}


def hand_paths(model, states, actions) -> PathSet:
    """PathSet from explicit (state, action) rows."""
    states = np.asarray(states, dtype=np.int32)
    actions = np.asarray(actions, dtype=np.int32)
    return PathSet(states, actions, model.n_states, model.n_actions,
                   "hand", 0, "")


