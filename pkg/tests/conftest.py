import numpy as np
import pytest

from ddelab.mdp import FiniteMdp, PointMassMixture, Uniform, point_mass, uniform_policy


@pytest.fixture
def one_state_mdp():
    """1 state, 1 action, reward delta_1, gamma=0.5."""
    return FiniteMdp(
        n_states=1,
        n_actions=1,
        transition=np.ones((1, 1, 1)),
        rewards=[[point_mass(1.0)]],
        gamma=0.5,
        rho0=np.ones(1),
    )


@pytest.fixture
def uniform_reward_mdp():
    """1 state, 1 action, Uniform(0,1) reward, gamma=0.5."""
    return FiniteMdp(
        n_states=1,
        n_actions=1,
        transition=np.ones((1, 1, 1)),
        rewards=[[Uniform(0.0, 1.0)]],
        gamma=0.5,
        rho0=np.ones(1),
    )


@pytest.fixture
def two_state_chain():
    """Deterministic 2-state swap chain with Uniform(0,1) rewards."""
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1.0
    transition[1, 0, 0] = 1.0
    return FiniteMdp(
        n_states=2,
        n_actions=1,
        transition=transition,
        rewards=[[Uniform(0.0, 1.0)], [Uniform(0.0, 1.0)]],
        gamma=0.9,
        rho0=np.array([1.0, 0.0]),
    )


@pytest.fixture
def pi1():
    return uniform_policy(1, 1)
