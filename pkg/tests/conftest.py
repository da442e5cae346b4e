import pytest

from ddcsim import (ccps_from_fixed_point, estimate_first_stage,
                    generate_panel, solve_fixed_point, MachineReplacementModel,
                    build_model)
from helpers import (FOOD_CASE1A, FOOD_PANEL_SEED, MACHINE_PANEL_SEED,
                     first_stage_from_tables)


@pytest.fixture(scope="session")
def machine():
    return MachineReplacementModel(5, beta=0.9)


@pytest.fixture(scope="session")
def machine_theta(machine):
    return machine.theta([1.0, 4.0])


@pytest.fixture(scope="session")
def machine_dp(machine, machine_theta):
    return solve_fixed_point(machine, machine_theta)


@pytest.fixture(scope="session")
def machine_ccps(machine, machine_theta):
    return ccps_from_fixed_point(machine, machine_theta)


@pytest.fixture(scope="session")
def machine_panel(machine, machine_ccps):
    return generate_panel(machine, machine_ccps, 10_000, 100,
                          seed=MACHINE_PANEL_SEED)


@pytest.fixture(scope="session")
def machine_fs(machine, machine_panel):
    return estimate_first_stage(machine_panel, machine)


@pytest.fixture(scope="session")
def machine_fs_exact(machine, machine_ccps):
    return first_stage_from_tables(machine, machine_ccps)


@pytest.fixture(scope="session")
def food_model():
    model, theta = build_model(FOOD_CASE1A)
    return model, theta


@pytest.fixture(scope="session")
def food_pipeline(food_model):
    model, theta = food_model
    ccps = ccps_from_fixed_point(model, theta)
    panel = generate_panel(model, ccps, 20_000, 100, seed=FOOD_PANEL_SEED)
    fs = estimate_first_stage(panel, model)
    return model, theta, ccps, panel, fs
