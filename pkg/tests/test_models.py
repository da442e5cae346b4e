import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddcsim import (FoodChoiceModel, MachineReplacementModel,
                    Theta, build_model, ccp_from_values,
                    draw_recipe_attributes, load_model_config, softmax_rows)
from helpers import FOOD_CASE1A


# -- Theta --------------------------------------------------------------------

def test_theta_validation():
    t = Theta(("a", "b"), [1.0, 2.0])
    assert t.as_dict() == {"a": 1.0, "b": 2.0}
    with pytest.raises(ValueError):
        Theta(("a",), [1.0, 2.0])
    with pytest.raises(ValueError):
        Theta(("a",), [np.nan])
    with pytest.raises(ValueError):
        Theta(("a",), [1.0], lower=[2.0])


def test_theta_names_must_match_model(machine):
    with pytest.raises(ValueError):
        machine.flow_utility(0, 0, Theta(("x", "y"), [1.0, 4.0]))


# -- machine flow utility and transitions ---------------------------------------

def test_machine_flow_utility_values(machine, machine_theta):
    # wear level 3, keep: -theta_mc * 3
    assert machine.flow_utility(machine.index_of(3), 0, machine_theta) == -3.0
    # wear level 5, replace: -theta_rc
    assert machine.flow_utility(machine.index_of(5), 1, machine_theta) == -4.0


def test_machine_flow_utility_index_errors(machine, machine_theta):
    with pytest.raises(ValueError):
        machine.flow_utility(5, 0, machine_theta)
    with pytest.raises(ValueError):
        machine.flow_utility(0, 2, machine_theta)
    with pytest.raises(ValueError):
        machine.index_of(6)


def test_machine_transitions(machine):
    # keeping at level 4 moves to level 5
    row = machine.transition_row(machine.index_of(4), 0)
    assert row[machine.index_of(5)] == 1.0 and row.sum() == 1.0
    # level 5 is absorbing under keep
    row = machine.transition_row(machine.index_of(5), 0)
    assert row[machine.index_of(5)] == 1.0
    # replacement resets to level 1
    row = machine.transition_row(machine.index_of(3), 1)
    assert row[machine.index_of(1)] == 1.0


def test_transition_rows_sum_to_one_exactly(machine, food_model):
    model, _ = food_model
    for m in (machine, model):
        for s in range(m.n_states):
            for a in range(m.n_actions):
                assert m.transition_row(s, a).sum() == 1.0


# -- logit mapping ----------------------------------------------------------------

def test_ccp_symmetric():
    np.testing.assert_allclose(ccp_from_values([0.0, 0.0]), [0.5, 0.5])


def test_ccp_analytic():
    np.testing.assert_allclose(ccp_from_values([np.log(3.0), 0.0]),
                               [0.75, 0.25], atol=1e-15)


def test_ccp_rejects_nonfinite():
    with pytest.raises(ValueError):
        ccp_from_values([np.inf, 0.0])
    with pytest.raises(ValueError):
        softmax_rows([[0.0, np.nan]])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    st.floats(-100, 100),
)
def test_ccp_shift_invariance_and_normalization(values, c):
    base = ccp_from_values(values)
    shifted = ccp_from_values(np.asarray(values) + c)
    assert abs(base.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(base, shifted, atol=1e-12)


# -- food model dynamics -----------------------------------------------------------

def test_food_skip_utility(food_model):
    model, theta = food_model
    # zero stocks, zero streak, skip: the constant skip disutility
    assert model.flow_utility(model.encode_state((0, 0, 0, 0, 0)), 0,
                              theta) == -5.0


def test_food_order_utility_terms(food_model):
    model, theta = food_model
    s = model.encode_state((0, 0, 0, 0, 0))
    for m in range(1, model.n_actions):
        assert model.flow_utility(s, m, theta) == pytest.approx(
            model.r_fixed[m - 1]
        )


def test_food_skip_resets_stocks_and_streak(food_model):
    model, _ = food_model
    succ = model.successor_table()
    for s in range(model.n_states):
        assert model.decode_state(succ[s, 0]) == (0, 0, 0, 0, 0)


def test_food_order_carries_stocks_clipped(food_model):
    model, _ = food_model
    succ = model.successor_table()
    for s in range(model.n_states):
        slt, sug, sat, h, last = model.decode_state(s)
        for m in range(1, model.n_actions):
            inc = model.recipe_attributes[m - 1]
            got = model.decode_state(succ[s, m])
            want = (
                min(slt + inc[0], model.stock_max),
                min(sug + inc[1], model.stock_max),
                min(sat + inc[2], model.stock_max),
                min(h + 1, model.h_max) if m == last else 0,
                m,
            )
            assert got == want


def test_food_encode_origin_and_bijection(food_model):
    model, _ = food_model
    assert model.encode_state((0, 0, 0, 0, 0)) == 0
    seen = set()
    for idx in range(model.n_states):
        structured = model.decode_state(idx)
        assert model.encode_state(structured) == idx
        assert structured not in seen
        seen.add(structured)


def test_food_encode_errors(food_model):
    model, _ = food_model
    with pytest.raises(ValueError):
        model.encode_state((model.stock_max + 1, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        model.encode_state((0, 0, 0, model.h_max + 1, 0))
    with pytest.raises(ValueError):
        model.encode_state((0, 0, 0, 0, model.n_recipes + 1))


def test_food_closure_matches_brute_force(food_model):
    # independent forward closure: plain set/queue walk of the dynamics
    model, _ = food_model
    attrs = model.recipe_attributes
    cap, hmax = model.stock_max, model.h_max

    def step(state, a):
        slt, sug, sat, h, last = state
        if a == 0:
            return (0, 0, 0, 0, 0)
        i = attrs[a - 1]
        return (min(slt + i[0], cap), min(sug + i[1], cap),
                min(sat + i[2], cap),
                min(h + 1, hmax) if a == last else 0, a)

    frontier = [(0, 0, 0, 0, 0)]
    reached = {frontier[0]}
    while frontier:
        state = frontier.pop()
        for a in range(model.n_actions):
            nxt = step(state, a)
            if nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    assert len(reached) == model.n_states
    assert reached == {model.decode_state(i) for i in range(model.n_states)}


# -- utility linearity in theta -----------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 10 ** 6))
def test_flow_utility_linear_in_theta(machine, food_model, c, cell):
    # u(s,a;c*theta) - u(s,a;0) = c * (u(s,a;theta) - u(s,a;0)); the known
    # intrinsic-taste constants sit in u(s,a;0) and stay out of theta
    for model, theta in ((machine, machine.theta([1.0, 4.0])),
                         (food_model[0], food_model[1])):
        s = cell % model.n_states
        a = (cell // model.n_states) % model.n_actions
        zero = model.theta(np.zeros(model.n_params))
        u0 = model.flow_utility(s, a, zero)
        u1 = model.flow_utility(s, a, theta)
        uc = model.flow_utility(s, a, theta.replace(c * theta.values))
        assert uc - u0 == pytest.approx(c * (u1 - u0), abs=1e-9)


def test_utility_table_matches_flow_utility(machine, machine_theta, food_model):
    fmodel, ftheta = food_model
    for model, theta in ((machine, machine_theta), (fmodel, ftheta)):
        table = model.utility_table(theta)
        for s in range(model.n_states):
            for a in range(model.n_actions):
                assert table[s, a] == pytest.approx(
                    model.flow_utility(s, a, theta), abs=1e-12
                )


# -- attribute draws and config io ----------------------------------------------------

def test_draw_recipe_attributes_identifiable():
    for seed in range(20):
        attrs = draw_recipe_attributes(2, np.random.default_rng(seed))
        assert attrs.shape == (2, 3)
        assert np.all(attrs.sum(axis=0) > 0)
        for i in range(3):
            for j in range(i + 1, 3):
                cross = np.outer(attrs[:, i], attrs[:, j])
                assert not np.array_equal(cross, cross.T)


def test_build_model_machine_and_food(tmp_path):
    model, theta = build_model(
        {"kind": "machine", "n_levels": 5, "beta": 0.9,
         "theta": {"theta_mc": 1.0, "theta_rc": 4.0}}
    )
    assert isinstance(model, MachineReplacementModel)
    assert theta.values.tolist() == [1.0, 4.0]

    fmodel, ftheta = build_model(FOOD_CASE1A)
    assert isinstance(fmodel, FoodChoiceModel)
    np.testing.assert_array_equal(fmodel.r_fixed, [0.5, 0.4])

    cfg_file = tmp_path / "m.json"
    import json
    cfg_file.write_text(json.dumps(FOOD_CASE1A))
    fmodel2, _ = load_model_config(cfg_file)
    assert fmodel2.n_states == fmodel.n_states
    np.testing.assert_array_equal(fmodel2.recipe_attributes,
                                  fmodel.recipe_attributes)


def test_build_model_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_model({"kind": "widget"})


def test_beta_domain():
    with pytest.raises(ValueError):
        MachineReplacementModel(5, beta=1.0)
    with pytest.raises(ValueError):
        MachineReplacementModel(5, beta=0.0)
