import numpy as np
import pytest

from scenario_irl.basis import (default_joint_quadrature, default_state_quadrature, lqg_cost_basis,
                                lqg_value_basis, normalization_row)
from scenario_irl.forward import DiscreteModel, Grid, lqg_true_cost, value_iteration
from scenario_irl.mdp_core import LQGParams, truncated_lqg_model


@pytest.fixture(scope="session")
def lqg():
    return truncated_lqg_model(LQGParams(), 0.9)


@pytest.fixture(scope="session")
def bases():
    return lqg_cost_basis(10.0, 0.03), lqg_value_basis(10.0, 0.03)


@pytest.fixture(scope="session")
def state_quad(lqg):
    return default_state_quadrature(lqg)


@pytest.fixture(scope="session")
def joint_quad(lqg):
    return default_joint_quadrature(lqg)


@pytest.fixture(scope="session")
def norm_row(lqg, bases, joint_quad, state_quad):
    return normalization_row(lqg, *bases, joint_quad, state_quad)


@pytest.fixture(scope="session")
def coarse_disc(lqg):
    return DiscreteModel.build(lqg, Grid.uniform(lqg, 101, 101))


@pytest.fixture(scope="session")
def expert_vi(lqg, coarse_disc):
    return value_iteration(lqg, lqg_true_cost(lqg), coarse_disc.grid, 1e-10, disc=coarse_disc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
