"""Exact and empirical distributional Bellman operators on quantile tables.

The exact operator evaluates the one-step target CDF in closed form by
enumerating next-state atoms and integrating the reward CDF; the empirical
operator replaces the transition/reward expectation with dataset averages,
with next actions always enumerated exactly under the policy.
"""
from __future__ import annotations

import numpy as np

from .mdp import FiniteMdp, MissingDataError, OfflineDataset, PointMassMixture, Policy
from .quantiles import AtomMixture, QuantileTable


def _pair_weights(mdp: FiniteMdp, pi: Policy, s: int, a: int) -> np.ndarray:
    """p^pi(s',a'|s,a) = P(s'|s,a) * pi(a'|s') as an (S, A) table."""
    return mdp.transition[s, a][:, None] * pi.probs


def exact_bellman_cdf(mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, z):
    """CDF of the one-step Bellman target at z (scalar or array).

    Sums p^pi(s',a'|s,a) * (1/M) * F_R(z - gamma * Z(s',a',m)) over all
    next pairs and atoms, with the reward CDF evaluated in closed form.
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    w = _pair_weights(mdp, pi, s, a)
    reward = mdp.rewards[s][a]
    out = np.zeros_like(z_arr)
    m_atoms = eta.n_atoms
    for s2 in range(mdp.n_states):
        for a2 in range(mdp.n_actions):
            if w[s2, a2] == 0.0:
                continue
            shifted = z_arr[:, None] - mdp.gamma * eta.atoms[s2, a2][None, :]
            out += w[s2, a2] * reward.cdf(shifted).sum(axis=1) / m_atoms
    return float(out[0]) if np.isscalar(z) or np.asarray(z).ndim == 0 else out


def exact_bellman_atoms(mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int) -> AtomMixture:
    """Finite mixture r_i + gamma * Z(s',a',m) for point-mass-reward MDPs."""
    reward = mdp.rewards[s][a]
    if not isinstance(reward, PointMassMixture):
        raise TypeError("exact_bellman_atoms requires point-mass rewards")
    w = _pair_weights(mdp, pi, s, a)
    m_atoms = eta.n_atoms
    values, weights = [], []
    for s2 in range(mdp.n_states):
        for a2 in range(mdp.n_actions):
            if w[s2, a2] == 0.0:
                continue
            v = reward.values[:, None] + mdp.gamma * eta.atoms[s2, a2][None, :]
            values.append(v.ravel())
            weights.append(
                np.repeat(reward.weights * (w[s2, a2] / m_atoms), m_atoms)
            )
    return AtomMixture(np.concatenate(values), np.concatenate(weights))


def _invert_monotone_cdf(cdf_fn, taus: np.ndarray, lo: float, hi: float, iters: int = 100) -> np.ndarray:
    """Vectorized bisection for F^{-1}(tau) on a continuous increasing CDF."""
    lo_v = np.full(taus.shape, lo)
    hi_v = np.full(taus.shape, hi)
    for _ in range(iters):
        mid = 0.5 * (lo_v + hi_v)
        below = cdf_fn(mid) < taus
        lo_v = np.where(below, mid, lo_v)
        hi_v = np.where(below, hi_v, mid)
    return 0.5 * (lo_v + hi_v)


def exact_bellman_quantiles(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, n_out: int | None = None
) -> np.ndarray:
    """Quantiles of the exact Bellman target at the midpoint levels.

    Point-mass rewards use exact mixture quantile extraction; continuous
    rewards invert the closed-form target CDF by bisection.
    """
    n_out = eta.n_atoms if n_out is None else n_out
    tau_hat = (np.arange(1, n_out + 1) - 0.5) / n_out
    if isinstance(mdp.rewards[s][a], PointMassMixture):
        return exact_bellman_atoms(mdp, pi, eta, s, a).inverse_cdf(tau_hat)
    r_lo, r_hi = mdp.rewards[s][a].support()
    lo = r_lo + mdp.gamma * float(eta.atoms.min()) - 1e-9
    hi = r_hi + mdp.gamma * float(eta.atoms.max()) + 1e-9
    return _invert_monotone_cdf(
        lambda z: exact_bellman_cdf(mdp, pi, eta, s, a, z), tau_hat, lo, hi
    )


def empirical_bellman_mixture(
    dataset: OfflineDataset, pi: Policy, eta: QuantileTable, gamma: float, s: int, a: int
) -> AtomMixture:
    """Weighted mixture {r + gamma * Z(s',a',m)} over D(s,a), enumerating a'.

    Weights are pi(a'|s') / (N(s,a) * M); this is the empirical Bellman
    target distribution for the pair.
    """
    r, s_next = dataset.pair_data(s, a)
    n = r.size
    m_atoms = eta.n_atoms
    values, weights = [], []
    for a2 in range(pi.n_actions):
        p_col = pi.probs[s_next, a2]
        live = p_col > 0.0
        if not np.any(live):
            continue
        v = r[live, None] + gamma * eta.atoms[s_next[live], a2, :]
        values.append(v.ravel())
        weights.append(np.repeat(p_col[live] / (n * m_atoms), m_atoms))
    return AtomMixture(np.concatenate(values), np.concatenate(weights))


def empirical_bellman_cdf(
    dataset: OfflineDataset, pi: Policy, eta: QuantileTable, gamma: float, s: int, a: int, z
):
    """Dataset-average target CDF at z; requires N(s,a) >= 1."""
    return empirical_bellman_mixture(dataset, pi, eta, gamma, s, a).cdf(z)


def empirical_bellman_quantiles(
    dataset: OfflineDataset, pi: Policy, eta: QuantileTable, gamma: float, s: int, a: int
) -> np.ndarray:
    """Exact midpoint quantiles of the empirical Bellman target for (s,a)."""
    mix = empirical_bellman_mixture(dataset, pi, eta, gamma, s, a)
    m_atoms = eta.n_atoms
    tau_hat = (np.arange(1, m_atoms + 1) - 0.5) / m_atoms
    return mix.inverse_cdf(tau_hat)
