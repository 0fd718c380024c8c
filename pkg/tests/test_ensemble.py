import numpy as np
import pytest

from ddelab.bellman import exact_bellman_quantiles
from ddelab.distortion import DistortionTable, dde_step, iterate_fixed_point
from ddelab.ensemble import (
    Ensemble,
    SigmaTable,
    build_phi,
    distorted_target,
    ensemble_regression_step,
    ensemble_stats,
    init_ensemble,
    polyak_update,
    regression_loss_grad,
    sample_batch,
)
from ddelab.mdp import FiniteMdp, OfflineDataset, point_mass, uniform_policy
from ddelab.quantiles import QuantileTable, wasserstein

SHAPE = (2, 2, 4)


def test_init_constant_zero_sigma():
    ens = init_ensemble(3, SHAPE, ("constant", 0.0), np.random.default_rng(0))
    stats = ensemble_stats(ens.targets)
    assert np.all(stats.sigma == 0.0) and np.all(stats.mu == 0.0)


def test_init_uniform_degenerate_equals_constant():
    ens = init_ensemble(2, SHAPE, ("uniform_random", 0.7, 0.7), np.random.default_rng(0))
    assert np.all(ens.online[0].atoms == 0.7)


def test_init_seeds_differ_shapes_match():
    a = init_ensemble(2, SHAPE, ("uniform_random", 0, 1), np.random.default_rng(1))
    b = init_ensemble(2, SHAPE, ("uniform_random", 0, 1), np.random.default_rng(2))
    assert a.online[0].atoms.shape == b.online[0].atoms.shape
    assert not np.array_equal(a.online[0].atoms, b.online[0].atoms)


def test_init_rejects_single_member():
    with pytest.raises(ValueError, match="L >= 2"):
        init_ensemble(1, SHAPE, ("constant", 0.0), np.random.default_rng(0))


def test_stats_two_member_arithmetic():
    t1 = QuantileTable.constant(SHAPE, 1.0)
    t2 = QuantileTable.constant(SHAPE, 3.0)
    stats = ensemble_stats([t1, t2])
    assert np.all(stats.mu == 2.0) and np.all(stats.sigma == 1.0)


def test_stats_permutation_invariance():
    rng = np.random.default_rng(3)
    tables = [QuantileTable(rng.normal(size=SHAPE)) for _ in range(4)]
    a = ensemble_stats(tables)
    b = ensemble_stats(tables[::-1])
    # identical up to float summation order
    assert np.allclose(a.mu, b.mu, atol=1e-13) and np.allclose(a.sigma, b.sigma, atol=1e-13)


def test_build_phi_scaling():
    sigma = np.zeros(SHAPE)
    sigma[0, 1, 2] = 1.0
    stats = SigmaTable(np.zeros(SHAPE), sigma)
    assert np.all(build_phi(stats, 0.0).phi == 0.0)
    assert build_phi(stats, 0.5).phi[0, 1, 2] == 0.5
    assert np.array_equal(build_phi(stats, 2.0).phi, 2 * build_phi(stats, 1.0).phi)
    with pytest.raises(ValueError):
        build_phi(stats, -0.1)


def test_distorted_target_formula():
    mu = np.zeros(SHAPE)
    sigma = np.zeros(SHAPE)
    stats = SigmaTable(mu, sigma)
    assert distorted_target(stats, 0.5, 0.9, 0, 0, 1.0, 1, 0, 2) == 1.0
    mu2 = np.full(SHAPE, 2.0)
    sigma2 = np.full(SHAPE, 0.2)
    stats2 = SigmaTable(mu2, sigma2)
    # r + gamma*mu(s',a',j) - beta*sigma(s,a,j) = 1 + 0.5*2 - 0.5*0.2
    assert np.isclose(distorted_target(stats2, 0.5, 0.5, 0, 0, 1.0, 1, 0, 2), 1.9)
    # beta=0 recovers the undistorted target
    assert np.isclose(distorted_target(stats2, 0.0, 0.5, 0, 0, 1.0, 1, 0, 2), 2.0)


def one_pair_setup(n_atoms=1, l_members=2, **kw):
    shape = (1, 1, n_atoms)
    ens = init_ensemble(l_members, shape, ("constant", 0.0), np.random.default_rng(0),
                        beta=0.0, gamma=0.5, **kw)
    batch = (np.array([0]), np.array([0]), np.array([1.0]), np.array([0]))
    return ens, batch, uniform_policy(1, 1)


def test_regression_zero_learning_rate_no_change():
    ens, batch, pi = one_pair_setup(n_atoms=3, learning_rate=0.0)
    out = ensemble_regression_step(ens, batch, pi, np.random.default_rng(0))
    for before, after in zip(ens.online, out.online):
        assert np.array_equal(before.atoms, after.atoms)


def test_regression_pull_direction():
    # target T = r + gamma*mu = 1.0 with mu=0; Z starts at 0 -> moves up
    ens, batch, pi = one_pair_setup(learning_rate=0.1, kappa_huber=10.0)
    out = ensemble_regression_step(ens, batch, pi, np.random.default_rng(0))
    assert out.online[0].atoms[0, 0, 0] > 0.0
    # and symmetric: start above the target -> moves down
    high = init_ensemble(2, (1, 1, 1), ("constant", 5.0), np.random.default_rng(0),
                         beta=0.0, gamma=0.5, learning_rate=0.1, kappa_huber=10.0)
    out2 = ensemble_regression_step(high, batch, pi, np.random.default_rng(0))
    assert out2.online[0].atoms[0, 0, 0] < 5.0


def test_regression_converges_single_tuple():
    # fixed batch, sigma frozen at 0 (identical members), M=1, tau-hat=0.5
    ens, batch, pi = one_pair_setup(learning_rate=0.1, kappa_huber=1.0)
    rng = np.random.default_rng(0)
    target = 1.0  # r + gamma * mu(s',a',0) = 1 + 0.5*0
    for step in range(10_000):
        ens = ensemble_regression_step(ens, batch, pi, rng)
        if abs(ens.online[0].atoms[0, 0, 0] - target) <= 1e-6:
            break
    assert abs(ens.online[0].atoms[0, 0, 0] - target) <= 1e-6


def test_regression_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    atoms = np.sort(rng.normal(size=(2, 2, 3)), axis=-1)
    s = rng.integers(0, 2, size=6)
    a = rng.integers(0, 2, size=6)
    targets = rng.normal(size=(6, 3))
    weights = np.ones((6, 3))
    kappa = 0.8
    h = 1e-6
    checked = 0
    rng2 = np.random.default_rng(12)
    while checked < 100:
        idx = (int(rng2.integers(0, 2)), int(rng2.integers(0, 2)), int(rng2.integers(0, 3)))
        # nudge entries whose perturbation would cross a loss kink
        us = targets.ravel() - atoms[idx]
        if np.any(np.abs(us) < 1e-4) or np.any(np.abs(np.abs(us) - kappa) < 1e-4):
            atoms[idx] += 3e-4
            continue
        _, grad = regression_loss_grad(atoms, (s, a), targets, weights, kappa)
        up = atoms.copy(); up[idx] += h
        dn = atoms.copy(); dn[idx] -= h
        lu, _ = regression_loss_grad(up, (s, a), targets, weights, kappa)
        ld, _ = regression_loss_grad(dn, (s, a), targets, weights, kappa)
        fd = (lu - ld) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-4
        checked += 1


def test_polyak_mixing():
    shape = (1, 1, 2)
    online = [QuantileTable.constant(shape, 1.0)] * 2
    targets = [QuantileTable.constant(shape, 0.0)] * 2
    ens = Ensemble(online, targets, beta=0.0, gamma=0.9, kappa_polyak=0.1)
    out = polyak_update(ens)
    assert np.allclose(out.targets[0].atoms, 0.1)
    assert np.allclose(out.online[0].atoms, 1.0)
    full = polyak_update(Ensemble(online, targets, beta=0.0, gamma=0.9, kappa_polyak=1.0))
    assert np.allclose(full.targets[0].atoms, 1.0)
    tiny = polyak_update(Ensemble(online, targets, beta=0.0, gamma=0.9, kappa_polyak=1e-9))
    assert np.allclose(tiny.targets[0].atoms, 0.0, atol=1e-8)


def test_ensemble_guards():
    shape = (1, 1, 2)
    tables = [QuantileTable.constant(shape, 0.0)] * 2
    with pytest.raises(ValueError):
        Ensemble(tables[:1], tables[:1], beta=0.0, gamma=0.9)
    with pytest.raises(ValueError):
        Ensemble(tables, tables, beta=-1.0, gamma=0.9)
    with pytest.raises(ValueError):
        Ensemble(tables, tables, beta=0.0, gamma=0.9, kappa_polyak=0.0)
    with pytest.raises(ValueError):
        Ensemble(tables, tables, beta=0.0, gamma=0.9, penalty_shape="flat")
    with pytest.raises(ValueError):
        ensemble_regression_step(
            Ensemble(tables, tables, beta=0.0, gamma=0.9),
            (np.array([]), np.array([]), np.array([]), np.array([])),
            uniform_policy(1, 1),
            np.random.default_rng(0),
        )


def test_pessimism_monotone_in_beta(one_state_mdp, pi1):
    # frozen sigma; dde fixed points are entrywise nonincreasing in beta
    sigma = np.random.default_rng(5).uniform(0.05, 0.3, size=(1, 1, 8))
    stats = SigmaTable(np.zeros((1, 1, 8)), sigma)
    prev = None
    for beta in (0.0, 0.25, 0.5, 1.0):
        phi = build_phi(stats, beta)
        eta, rep = iterate_fixed_point(
            lambda e: dde_step(one_state_mdp, pi1, e, phi),
            QuantileTable.constant((1, 1, 8), 0.0),
            1e-10,
            300,
        )
        assert rep.converged
        if prev is not None:
            assert np.all(eta.atoms <= prev + 1e-12)
        prev = eta.atoms


def test_regression_matches_projected_fixed_point():
    """Full-coverage exact-frequency dataset, beta=0, enumeration: members
    converge to the exact projected fixed point within w1 <= 2*range/M + 1e-3."""
    rng = np.random.default_rng(21)
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 1] = 1.0
    transition[0, 1, 0] = 1.0
    transition[1, 0, 0] = 1.0
    transition[1, 1, 1] = 1.0
    rewards = [[point_mass(1.0), point_mass(0.2)], [point_mass(-0.5), point_mass(0.8)]]
    mdp = FiniteMdp(2, 2, transition, rewards, 0.8, np.array([1.0, 0.0]))
    pi = uniform_policy(2, 2)
    m_atoms = 16
    shape = (2, 2, m_atoms)
    eta_star, rep = iterate_fixed_point(
        lambda e: dde_step(mdp, pi, e, DistortionTable.zeros(shape)),
        QuantileTable.constant(shape, 0.0),
        1e-12,
        2000,
    )
    assert rep.converged
    ds = OfflineDataset(
        np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]),
        np.array([1.0, 0.2, -0.5, 0.8]), np.array([1, 0, 0, 1]), 2, 2,
    )
    batch = (ds.s, ds.a, ds.r, ds.s_next)
    lo, hi = mdp.return_range()
    ens = init_ensemble(
        2, shape, ("uniform_random", lo, hi), rng,
        beta=0.0, gamma=0.8, learning_rate=0.5, kappa_huber=0.05,
        kappa_polyak=1.0, enumerate_next_actions=True,
    )
    for _ in range(300):
        for _ in range(30):
            ens = ensemble_regression_step(ens, batch, pi, rng)
        ens = polyak_update(ens)
    tol = 2 * (hi - lo) / m_atoms + 1e-3
    for member in ens.online:
        for s in range(2):
            for a in range(2):
                assert wasserstein(member.atoms[s, a], eta_star.atoms[s, a], 1) <= tol


def test_sample_batch_shapes():
    ds = OfflineDataset(
        np.array([0, 0, 1]), np.array([0, 1, 0]), np.array([1.0, 2.0, 3.0]),
        np.array([1, 0, 0]), 2, 2,
    )
    s, a, r, s_next = sample_batch(ds, 5, np.random.default_rng(0))
    assert s.shape == (5,) and r.shape == (5,)
