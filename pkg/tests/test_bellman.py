import math

import numpy as np
import pytest

from ddelab.bellman import (
    empirical_bellman_cdf,
    empirical_bellman_mixture,
    empirical_bellman_quantiles,
    exact_bellman_atoms,
    exact_bellman_cdf,
    exact_bellman_quantiles,
)
from ddelab.mdp import (
    FiniteMdp,
    MissingDataError,
    OfflineDataset,
    PointMassMixture,
    Uniform,
    point_mass,
    uniform_policy,
)
from ddelab.quantiles import QuantileTable


def delta_table(shape, value=0.0):
    return QuantileTable(np.full(shape, value))


def test_exact_cdf_single_pushforward_atom(one_state_mdp, pi1):
    eta = delta_table((1, 1, 4))
    assert exact_bellman_cdf(one_state_mdp, pi1, eta, 0, 0, 0.999) == 0.0
    assert exact_bellman_cdf(one_state_mdp, pi1, eta, 0, 0, 1.0) == 1.0
    assert exact_bellman_cdf(one_state_mdp, pi1, eta, 0, 0, 1.5) == 1.0


def test_exact_cdf_uniform_reward(uniform_reward_mdp, pi1):
    eta = delta_table((1, 1, 3))
    for z in (-0.5, 0.0, 0.25, 0.8, 1.0, 2.0):
        assert np.isclose(
            exact_bellman_cdf(uniform_reward_mdp, pi1, eta, 0, 0, z), np.clip(z, 0, 1)
        )


def brute_force_cdf(mdp, pi, eta, s, a, z):
    """Plain triple-loop enumeration oracle integrating the reward CDF."""
    total = 0.0
    m_atoms = eta.n_atoms
    for s2 in range(mdp.n_states):
        for a2 in range(mdp.n_actions):
            w = mdp.transition[s, a, s2] * pi.probs[s2, a2]
            for m in range(m_atoms):
                total += w * float(mdp.rewards[s][a].cdf(z - mdp.gamma * eta.atoms[s2, a2, m])) / m_atoms
    return total


@pytest.fixture
def random_3state_mdp():
    rng = np.random.default_rng(17)
    transition = rng.dirichlet(np.ones(3), size=(3, 2))
    rewards = []
    for s in range(3):
        row = []
        for a in range(2):
            if (s + a) % 2 == 0:
                row.append(Uniform(-0.5 + 0.1 * s, 0.8 + 0.1 * a))
            else:
                row.append(PointMassMixture(rng.normal(size=3), rng.dirichlet(np.ones(3))))
        rewards.append(row)
    return FiniteMdp(3, 2, transition, rewards, 0.85, np.full(3, 1 / 3))


def test_exact_cdf_matches_enumeration_oracle(random_3state_mdp):
    rng = np.random.default_rng(3)
    pi = uniform_policy(3, 2)
    eta = QuantileTable(rng.normal(size=(3, 2, 5)))
    for s in range(3):
        for a in range(2):
            for z in rng.uniform(-2, 3, size=5):
                assert np.isclose(
                    exact_bellman_cdf(random_3state_mdp, pi, eta, s, a, z),
                    brute_force_cdf(random_3state_mdp, pi, eta, s, a, z),
                    atol=1e-10,
                )


def test_exact_atoms_point_reward(one_state_mdp, pi1):
    eta = delta_table((1, 1, 2))
    mix = exact_bellman_atoms(one_state_mdp, pi1, eta, 0, 0)
    assert np.allclose(mix.values, 1.0)
    assert np.isclose(mix.weights.sum(), 1.0)


def test_exact_atoms_direct_enumeration():
    transition = np.zeros((3, 1, 3))
    transition[0, 0, 1] = 0.5
    transition[0, 0, 2] = 0.5
    transition[1:, 0, 0] = 1.0
    mdp = FiniteMdp(3, 1, transition, [[point_mass(0.0)]] * 3, 0.5, np.array([1.0, 0, 0]))
    pi = uniform_policy(3, 1)
    atoms = np.zeros((3, 1, 1))
    atoms[1, 0, 0] = 0.0
    atoms[2, 0, 0] = 2.0
    mix = exact_bellman_atoms(mdp, pi, QuantileTable(atoms), 0, 0)
    assert np.allclose(mix.values, [0.0, 1.0])
    assert np.allclose(mix.weights, [0.5, 0.5])


def test_exact_atoms_weight_conservation(random_3state_mdp):
    pi = uniform_policy(3, 2)
    eta = QuantileTable(np.random.default_rng(0).normal(size=(3, 2, 4)))
    # pick a pair with point-mass reward
    mix = exact_bellman_atoms(random_3state_mdp, pi, eta, 0, 1)
    assert np.isclose(mix.weights.sum(), 1.0)


def test_exact_atoms_rejects_continuous(random_3state_mdp):
    pi = uniform_policy(3, 2)
    eta = delta_table((3, 2, 2))
    with pytest.raises(TypeError):
        exact_bellman_atoms(random_3state_mdp, pi, eta, 0, 0)


def test_exact_atoms_cdf_consistency(random_3state_mdp):
    pi = uniform_policy(3, 2)
    rng = np.random.default_rng(4)
    eta = QuantileTable(rng.normal(size=(3, 2, 4)))
    mix = exact_bellman_atoms(random_3state_mdp, pi, eta, 0, 1)
    for z in rng.uniform(-2, 3, size=20):
        assert np.isclose(
            float(mix.cdf(z)), exact_bellman_cdf(random_3state_mdp, pi, eta, 0, 1, z), atol=1e-12
        )


def test_exact_quantiles_continuous_bisection(uniform_reward_mdp, pi1):
    # target is Uniform(0,1) when eta = delta_0: quantiles at midpoints
    eta = delta_table((1, 1, 4))
    q = exact_bellman_quantiles(uniform_reward_mdp, pi1, eta, 0, 0)
    assert np.allclose(q, [0.125, 0.375, 0.625, 0.875], atol=1e-9)


def one_tuple_dataset():
    return OfflineDataset(
        np.array([0]), np.array([0]), np.array([1.0]), np.array([0]), 1, 1
    )


def test_empirical_single_tuple_step(pi1):
    eta = delta_table((1, 1, 3))
    ds = one_tuple_dataset()
    assert empirical_bellman_cdf(ds, pi1, eta, 0.5, 0, 0, 0.999) == 0.0
    assert empirical_bellman_cdf(ds, pi1, eta, 0.5, 0, 0, 1.0) == 1.0
    assert np.allclose(empirical_bellman_quantiles(ds, pi1, eta, 0.5, 0, 0), 1.0)


def test_empirical_plug_in_identity():
    # dataset with empirical frequencies equal to true probabilities
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 0] = 0.5
    transition[0, 0, 1] = 0.5
    transition[1, 0, 1] = 1.0
    rewards = [[PointMassMixture(np.array([0.0, 1.0]), np.array([0.5, 0.5]))], [point_mass(2.0)]]
    mdp = FiniteMdp(2, 1, transition, rewards, 0.5, np.array([1.0, 0.0]))
    pi = uniform_policy(2, 1)
    eta = QuantileTable(np.random.default_rng(1).normal(size=(2, 1, 3)))
    # all 4 equally likely (r, s') combos for (s=0,a=0), once each
    ds = OfflineDataset(
        np.zeros(4, dtype=int),
        np.zeros(4, dtype=int),
        np.array([0.0, 0.0, 1.0, 1.0]),
        np.array([0, 1, 0, 1]),
        2,
        1,
    )
    for z in np.linspace(-1, 3, 31):
        assert np.isclose(
            empirical_bellman_cdf(ds, pi, eta, 0.5, 0, 0, z),
            exact_bellman_cdf(mdp, pi, eta, 0, 0, z),
            atol=1e-12,
        )


def test_empirical_cdf_axioms(pi1):
    rng = np.random.default_rng(2)
    eta = QuantileTable(rng.normal(size=(1, 1, 4)))
    ds = OfflineDataset(
        np.zeros(6, dtype=int), np.zeros(6, dtype=int), rng.normal(size=6),
        np.zeros(6, dtype=int), 1, 1,
    )
    zs = np.linspace(-5, 5, 101)
    vals = np.array([empirical_bellman_cdf(ds, pi1, eta, 0.9, 0, 0, z) for z in zs])
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] == 0.0 and vals[-1] == 1.0


def test_empirical_quantiles_sorted_and_midpoints(pi1):
    eta = delta_table((1, 1, 2))
    ds = OfflineDataset(
        np.zeros(2, dtype=int), np.zeros(2, dtype=int), np.array([0.0, 2.0]),
        np.zeros(2, dtype=int), 1, 1,
    )
    q = empirical_bellman_quantiles(ds, pi1, eta, 0.5, 0, 0)
    assert np.allclose(q, [0.0, 2.0])  # quantiles at tau-hat 0.25, 0.75
    assert np.all(np.diff(q) >= 0)


def test_empirical_missing_pair_raises(pi1):
    ds = one_tuple_dataset()
    eta = delta_table((1, 1, 2))
    ds2 = OfflineDataset(ds.s, ds.a, ds.r, ds.s_next, 2, 1)
    with pytest.raises(MissingDataError, match="no data"):
        empirical_bellman_quantiles(ds2, uniform_policy(2, 1), delta_table((2, 1, 2)), 0.5, 1, 0)


def test_dkw_plug_in_consistency(uniform_reward_mdp, pi1):
    """sup_z |empirical - exact| shrinks with N and respects the DKW envelope."""
    rng = np.random.default_rng(8)
    m_atoms = 8
    eta = QuantileTable(rng.uniform(0, 2, size=(1, 1, m_atoms)))
    gamma = uniform_reward_mdp.gamma
    atoms = eta.atoms[0, 0]
    replicates = 500
    sup_means = []
    for n in (100, 1000, 10_000):
        envelope = math.sqrt(math.log(2 / 0.01) / (2 * n))
        sups = np.empty(replicates)
        for rep in range(replicates):
            r = rng.uniform(0, 1, size=n)
            vals = np.sort((r[:, None] + gamma * atoms[None, :]).ravel())
            k = vals.size
            ecdf_hi = np.arange(1, k + 1) / k
            exact = np.clip(vals[:, None] - gamma * atoms[None, :], 0, 1).mean(axis=1)
            sups[rep] = np.maximum(
                np.abs(ecdf_hi - exact), np.abs(ecdf_hi - 1.0 / k - exact)
            ).max()
        sup_means.append(sups.mean())
        assert (sups <= envelope).mean() >= 0.99
    assert sup_means[0] > sup_means[1] > sup_means[2]
