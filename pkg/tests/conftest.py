import numpy as np
import pytest

from qfeedback import qmath, systems
from qfeedback.cost import CostSpec
from qfeedback.simulator import SeedSpec, SimConfig


@pytest.fixture
def two_qubit():
    return systems.two_qubit_system(eta=1.0)


@pytest.fixture
def rho_des():
    return qmath.symmetric_bell_density()


@pytest.fixture
def cost_spec(rho_des):
    return CostSpec(rho_des=rho_des, q_u=np.array([0.01, 0.01]))


@pytest.fixture
def seed_spec():
    return SeedSpec(1234)


@pytest.fixture
def short_sim():
    return SimConfig(dt=1e-3, n_steps=50)


def random_density(dim, rng, pure=False):
    if pure:
        return qmath.random_pure_state(dim, rng)
    return qmath.random_mixed_state(dim, rng)
