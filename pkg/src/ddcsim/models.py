"""MDP abstractions shared by the solver, simulators and estimators.

Defines the structural parameter vector, the finite-MDP model interface,
two concrete decision models (machine replacement and a repeat-purchase
food choice model), flat state encoding for the structured food state,
and the logit choice-probability mapping.

Both concrete models have deterministic state transitions and flow
utilities that are affine in the parameter vector,

    u(s, a; theta) = offset(s, a) + features(s, a) . theta,

which the solver and value engines exploit by precomputing the offset
and feature tables once per model.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

EULER_GAMMA = 0.5772156649015329
"""Mean of the standard type-1 extreme value distribution."""

__all__ = [
    "EULER_GAMMA",
    "Theta",
    "ModelSpec",
    "MachineReplacementModel",
    "FoodChoiceModel",
    "ValueTable",
    "ccp_from_values",
    "softmax_rows",
    "draw_recipe_attributes",
    "load_model_config",
    "build_model",
    "model_config_hash",
]


@dataclass(frozen=True)
class Theta:
    """Ordered, named structural utility parameters with optional box bounds."""

    names: tuple
    values: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.shape[0] != len(self.names):
            raise ValueError(
                f"theta has {values.shape[0]} values for {len(self.names)} names"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("theta values must all be finite")
        for attr in ("lower", "upper"):
            bound = getattr(self, attr)
            if bound is not None:
                bound = np.asarray(bound, dtype=np.float64)
                if bound.shape != values.shape:
                    raise ValueError(f"{attr} bound shape does not match values")
                object.__setattr__(self, attr, bound)
        if self.lower is not None and np.any(values < self.lower):
            raise ValueError("theta values below lower bounds")
        if self.upper is not None and np.any(values > self.upper):
            raise ValueError("theta values above upper bounds")

    def __len__(self):
        return len(self.names)

    def replace(self, values) -> "Theta":
        """Same names and bounds, new values."""
        return Theta(self.names, values, self.lower, self.upper)

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass
class ValueTable:
    """Dense S x J choice-specific values plus generation metadata."""

    values: np.ndarray
    meta: dict

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]


def ccp_from_values(values) -> np.ndarray:
    """Logit choice probabilities exp(v_a) / sum_j exp(v_j), max-shifted.

    Raises ValueError on non-finite input; output sums to 1 to within 1e-12.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("choice values must be finite")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(table) -> np.ndarray:
    """Row-wise logit mapping for an S x J value table."""
    v = np.asarray(table, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("choice values must be finite")
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class ModelSpec:
    """Finite MDP with additively separable type-1 EV utility shocks.

    Concrete subclasses populate, in ``__init__``:
      n_states, n_actions      counts (flat 0-based indices)
      beta                     discount factor, strictly inside (0, 1)
      theta_names              parameter ordering for Theta vectors
      initial_state            canonical "new unit" start index
      _offset, _features       (S, J) and (S, J, P) utility tables
      _successors              (S, J) int array of deterministic successors,
                               or None when transitions are stochastic
    """

    kind = "abstract"

    def __init__(self, n_states, n_actions, beta, theta_names):
        if not (0.0 < beta < 1.0):
            raise ValueError(f"discount factor must lie strictly in (0,1), got {beta}")
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.beta = float(beta)
        self.theta_names = tuple(theta_names)
        self.initial_state = 0
        self._offset = None
        self._features = None
        self._successors = None

    # -- parameter plumbing -------------------------------------------------

    @property
    def n_params(self) -> int:
        return len(self.theta_names)

    def theta(self, values, lower=None, upper=None) -> Theta:
        return Theta(self.theta_names, values, lower, upper)

    def check_theta(self, theta: Theta):
        if tuple(theta.names) != self.theta_names:
            raise ValueError(
                f"theta names {theta.names} do not match model {self.theta_names}"
            )

    def _check_indices(self, s, a):
        if not (0 <= s < self.n_states):
            raise ValueError(f"state index {s} out of range [0, {self.n_states})")
        if not (0 <= a < self.n_actions):
            raise ValueError(f"action index {a} out of range [0, {self.n_actions})")

    # -- utility ------------------------------------------------------------

    def utility_offset(self) -> np.ndarray:
        return self._offset

    def utility_features(self) -> np.ndarray:
        return self._features

    def utility_table(self, theta: Theta) -> np.ndarray:
        """u(s, a; theta) for every pair, shape (S, J)."""
        self.check_theta(theta)
        return self._offset + self._features @ theta.values

    def flow_utility(self, s, a, theta: Theta) -> float:
        self.check_theta(theta)
        self._check_indices(s, a)
        return float(self._offset[s, a] + self._features[s, a] @ theta.values)

    # -- transitions ----------------------------------------------------------

    def successor_table(self) -> Optional[np.ndarray]:
        """(S, J) deterministic successor indices, or None if stochastic."""
        return self._successors

    def transition_row(self, s, a) -> np.ndarray:
        """p(. | s, a) as a dense simplex over states."""
        self._check_indices(s, a)
        row = np.zeros(self.n_states)
        row[self._successors[s, a]] = 1.0
        return row

    def transition_support(self, s, a):
        """(indices, probabilities) of the nonzero transition entries."""
        self._check_indices(s, a)
        return (
            np.array([self._successors[s, a]], dtype=np.int64),
            np.array([1.0]),
        )

    def config_dict(self) -> dict:
        raise NotImplementedError


class MachineReplacementModel(ModelSpec):
    """Regenerative stopping problem over wear levels 1..N.

    Flat state index i corresponds to wear level i + 1.  Keeping the unit
    (a = 0) advances wear by one level, capped at N (absorbing); replacing
    (a = 1) resets wear to level 1.  Flow utility is -theta_mc * level for
    maintenance and -theta_rc for replacement.
    """

    kind = "machine"

    def __init__(self, n_levels=5, beta=0.9):
        if n_levels < 2:
            raise ValueError("need at least two wear levels")
        super().__init__(n_levels, 2, beta, ("theta_mc", "theta_rc"))
        self.n_levels = int(n_levels)

        succ = np.empty((self.n_states, 2), dtype=np.int64)
        succ[:, 0] = np.minimum(np.arange(self.n_states) + 1, self.n_states - 1)
        succ[:, 1] = 0
        self._successors = succ

        levels = np.arange(1, self.n_states + 1, dtype=np.float64)
        feats = np.zeros((self.n_states, 2, 2))
        feats[:, 0, 0] = -levels  # maintenance cost scales with wear
        feats[:, 1, 1] = -1.0  # flat replacement cost
        self._features = feats
        self._offset = np.zeros((self.n_states, 2))

    def index_of(self, level) -> int:
        if not (1 <= level <= self.n_levels):
            raise ValueError(f"wear level {level} out of range [1, {self.n_levels}]")
        return int(level) - 1

    def wear_level(self, index) -> int:
        self._check_indices(index, 0)
        return int(index) + 1

    def config_dict(self) -> dict:
        return {"kind": "machine", "n_levels": self.n_levels, "beta": self.beta}


def draw_recipe_attributes(n_recipes, rng) -> np.ndarray:
    """Per-recipe integer attribute levels in {0, 1, 2}, shape (M, 3).

    Redraws until every attribute appears in some recipe and no two
    attribute columns are proportional, so that the three stock
    disutility weights stay separately identified.
    """
    for _ in range(10_000):
        attrs = rng.integers(0, 3, size=(n_recipes, 3))
        if np.any(attrs.sum(axis=0) == 0):
            continue
        if _has_proportional_columns(attrs):
            continue
        return attrs
    raise RuntimeError("could not draw an identifiable attribute matrix")


def _has_proportional_columns(attrs) -> bool:
    m = attrs.shape[1]
    for i in range(m):
        for j in range(i + 1, m):
            cross = np.outer(attrs[:, i], attrs[:, j])
            # columns are proportional iff every 2x2 minor vanishes
            if np.array_equal(cross, cross.T):
                return True
    return False


class FoodChoiceModel(ModelSpec):
    """Repeat-purchase menu choice with attribute stocks and a repeat streak.

    Structured state: (slt, sug, sat, h, last) where the first three are
    accumulated attribute stocks capped at stock_max, h is the count of
    consecutive repeats of the same recipe capped at h_max, and last is
    the previous action (0 = skipped, m = recipe m).

    Dynamics: ordering recipe m carries all stocks forward and adds the
    recipe's attribute levels (clipped at the cap); skipping resets the
    stocks to zero.  The streak h increments only when the same recipe is
    re-ordered, and resets otherwise; skipping always resets it, so the
    post-skip state is unique.

    The flat state space is the forward closure of these dynamics from the
    all-zero state, discovered by breadth-first search; the all-zero state
    gets index 0.
    """

    kind = "food"

    def __init__(self, recipe_attributes, r_fixed, stock_max, h_max, beta,
                 attribute_seed=None):
        attrs = np.asarray(recipe_attributes, dtype=np.int64)
        if attrs.ndim != 2 or attrs.shape[1] != 3:
            raise ValueError("recipe_attributes must have shape (M, 3)")
        if np.any(attrs < 0):
            raise ValueError("attribute levels must be nonnegative")
        r_fixed = np.asarray(r_fixed, dtype=np.float64)
        m = attrs.shape[0]
        if r_fixed.shape != (m,):
            raise ValueError("r_fixed must have one entry per recipe")
        if stock_max < 1 or h_max < 1:
            raise ValueError("stock_max and h_max must be positive")

        self.n_recipes = m
        self.stock_max = int(stock_max)
        self.h_max = int(h_max)
        self.recipe_attributes = attrs
        self.r_fixed = r_fixed
        self.attribute_seed = attribute_seed

        states, index, succ = self._forward_closure(attrs, stock_max, h_max)
        theta_names = ("theta_slt", "theta_sug", "theta_sat",
                       "theta_variety", "theta_skip")
        super().__init__(len(states), m + 1, beta, theta_names)
        self._structured = states
        self._index = index
        self._successors = succ

        s_arr = states.astype(np.float64)
        feats = np.zeros((self.n_states, self.n_actions, 5))
        offset = np.zeros((self.n_states, self.n_actions))
        feats[:, 0, 4] = -1.0  # skipping costs -theta_skip, nothing else
        for a in range(1, self.n_actions):
            feats[:, a, 0] = -s_arr[:, 0]
            feats[:, a, 1] = -s_arr[:, 1]
            feats[:, a, 2] = -s_arr[:, 2]
            feats[:, a, 3] = -s_arr[:, 3]
            offset[:, a] = r_fixed[a - 1]
        self._features = feats
        self._offset = offset

    @staticmethod
    def _next_structured(state, a, attrs, stock_max, h_max):
        slt, sug, sat, h, last = state
        if a == 0:
            return (0, 0, 0, 0, 0)
        inc = attrs[a - 1]
        h2 = min(h + 1, h_max) if a == last else 0
        return (
            min(slt + inc[0], stock_max),
            min(sug + inc[1], stock_max),
            min(sat + inc[2], stock_max),
            h2,
            a,
        )

    @classmethod
    def _forward_closure(cls, attrs, stock_max, h_max):
        origin = (0, 0, 0, 0, 0)
        index = {origin: 0}
        order = [origin]
        edges = []
        head = 0
        n_actions = attrs.shape[0] + 1
        while head < len(order):
            state = order[head]
            row = []
            for a in range(n_actions):
                nxt = cls._next_structured(state, a, attrs, stock_max, h_max)
                if nxt not in index:
                    index[nxt] = len(order)
                    order.append(nxt)
                row.append(index[nxt])
            edges.append(row)
            head += 1
        states = np.array(order, dtype=np.int64)
        succ = np.array(edges, dtype=np.int64)
        return states, index, succ

    # -- flat encoding ------------------------------------------------------

    def encode_state(self, structured) -> int:
        """Flat index of a structured (slt, sug, sat, h, last) state."""
        key = tuple(int(x) for x in structured)
        if len(key) != 5:
            raise ValueError("structured state must have five components")
        slt, sug, sat, h, last = key
        if not all(0 <= x <= self.stock_max for x in (slt, sug, sat)):
            raise ValueError(f"stock component out of range in {key}")
        if not (0 <= h <= self.h_max):
            raise ValueError(f"streak component {h} out of range")
        if not (0 <= last <= self.n_recipes):
            raise ValueError(f"last action {last} out of range")
        try:
            return self._index[key]
        except KeyError:
            raise ValueError(f"structured state {key} is not reachable") from None

    def decode_state(self, index) -> tuple:
        self._check_indices(index, 0)
        return tuple(int(x) for x in self._structured[index])

    def structured_states(self) -> np.ndarray:
        return self._structured.copy()

    def config_dict(self) -> dict:
        return {
            "kind": "food",
            "n_recipes": self.n_recipes,
            "stock_max": self.stock_max,
            "h_max": self.h_max,
            "beta": self.beta,
            "recipe_attributes": self.recipe_attributes.tolist(),
            "r_fixed": self.r_fixed.tolist(),
            "attribute_seed": self.attribute_seed,
        }


# -- model configuration files ----------------------------------------------
#
# Models are described by a flat JSON object:
#
#   {"kind": "machine", "n_levels": 5, "beta": 0.9,
#    "theta": {"theta_mc": 1.0, "theta_rc": 4.0}}
#
#   {"kind": "food", "n_recipes": 2, "stock_max": 3, "h_max": 3, "beta": 0.9,
#    "attribute_seed": 7,
#    "theta": {"theta_slt": 0.5, "theta_sug": 0.5, "theta_sat": 0.75,
#              "theta_variety": 0.1, "theta_skip": 5.0}}
#
# Food configs may pin "recipe_attributes" (M x 3 ints) and "r_fixed"
# explicitly; otherwise attributes are drawn from attribute_seed and, for
# two-recipe menus, the intrinsic tastes default to (.5, .4) while larger
# menus draw them uniformly from [.3, .5].


def build_model(config: dict):
    """Instantiate (model, true_theta or None) from a config dict."""
    cfg = dict(config)
    kind = cfg.get("kind")
    if kind == "machine":
        model = MachineReplacementModel(
            n_levels=cfg.get("n_levels", 5), beta=cfg.get("beta", 0.9)
        )
    elif kind == "food":
        m = int(cfg.get("n_recipes", 2))
        seed = cfg.get("attribute_seed")
        if "recipe_attributes" in cfg:
            attrs = np.asarray(cfg["recipe_attributes"], dtype=np.int64)
        else:
            if seed is None:
                raise ValueError("food config needs recipe_attributes or attribute_seed")
            attrs = draw_recipe_attributes(m, np.random.default_rng(seed))
        if "r_fixed" in cfg:
            r_fixed = np.asarray(cfg["r_fixed"], dtype=np.float64)
        elif m == 2:
            r_fixed = np.array([0.5, 0.4])
        else:
            if seed is None:
                raise ValueError("food config needs r_fixed or attribute_seed")
            rng = np.random.default_rng([int(seed), 1])
            r_fixed = rng.uniform(0.3, 0.5, size=m)
        model = FoodChoiceModel(
            attrs,
            r_fixed,
            stock_max=cfg.get("stock_max", 3),
            h_max=cfg.get("h_max", 3),
            beta=cfg.get("beta", 0.9),
            attribute_seed=seed,
        )
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    theta = None
    if "theta" in cfg:
        vals = [cfg["theta"][name] for name in model.theta_names]
        theta = model.theta(vals)
    return model, theta


def load_model_config(path):
    """Read a model config JSON file; returns (model, true_theta or None)."""
    with open(path) as fh:
        return build_model(json.load(fh))


def model_config_hash(config: dict) -> str:
    """Stable hash of a config dict, for provenance fields."""
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
