"""Built-in benchmark MDP generators: chains (including the skewed-coverage
heavy-tailed chain used by the comparison study), a cliff gridworld, and
random MDPs."""
from __future__ import annotations

import numpy as np

from .mdp import FiniteMdp, PointMassMixture, Policy, Uniform, point_mass, validate_mdp


def chain_mdp(
    n_states: int = 10,
    gamma: float = 0.9,
    safe_low: float = 0.8,
    safe_high: float = 1.0,
    risky_base: float = 1.2,
    tail_value: float = -8.0,
    tail_prob: float = 0.05,
) -> FiniteMdp:
    """Two-action chain: both actions advance one state (last state absorbs).

    Action 0 is safe (two-point reward around its mean); action 1 looks
    better by its common outcome but carries a rare heavy left tail, so its
    true mean is worse.  The last state is absorbing with zero reward.
    """
    n_actions = 2
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        nxt = min(s + 1, n_states - 1)
        transition[s, :, nxt] = 1.0
    rewards = []
    safe = PointMassMixture(np.array([safe_low, safe_high]), np.array([0.5, 0.5]))
    risky = PointMassMixture(
        np.array([tail_value, risky_base]), np.array([tail_prob, 1.0 - tail_prob])
    )
    for s in range(n_states):
        if s == n_states - 1:
            rewards.append([point_mass(0.0), point_mass(0.0)])
        else:
            rewards.append([safe, risky])
    rho0 = np.zeros(n_states)
    rho0[0] = 1.0
    mdp = FiniteMdp(n_states, n_actions, transition, rewards, gamma, rho0)
    validate_mdp(mdp)
    return mdp


def skewed_behavior_weights(mdp: FiniteMdp, skew: float = 0.9) -> np.ndarray:
    """State-uniform sampling weights with action 0 covered ``skew`` : 1-skew.

    The terminal state contributes nothing to learning for the chain, but is
    still covered so every pair has data.
    """
    w = np.empty((mdp.n_states, mdp.n_actions))
    w[:, 0] = skew
    w[:, 1:] = (1.0 - skew) / max(1, mdp.n_actions - 1)
    return w / w.sum()


def gridworld_mdp(
    width: int = 4, height: int = 3, cliff: bool = True, gamma: float = 0.95
) -> FiniteMdp:
    """Deterministic cliff gridworld; states are row-major cells.

    Start bottom-left, absorbing goal bottom-right.  With the cliff flag the
    bottom cells between them cost -10 and teleport to the start; each move
    costs -0.04, reaching the goal pays +1.
    """
    n_states = width * height
    n_actions = 4  # up, right, down, left
    start = (height - 1) * width
    goal = height * width - 1
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
    transition = np.zeros((n_states, n_actions, n_states))
    rewards = [[point_mass(0.0)] * n_actions for _ in range(n_states)]
    for s in range(n_states):
        r_idx, c_idx = divmod(s, width)
        for a, (dr, dc) in enumerate(moves):
            if s == goal:
                transition[s, a, s] = 1.0
                rewards[s][a] = point_mass(0.0)
                continue
            r2 = min(max(r_idx + dr, 0), height - 1)
            c2 = min(max(c_idx + dc, 0), width - 1)
            dest = r2 * width + c2
            if cliff and r2 == height - 1 and 0 < c2 < width - 1:
                transition[s, a, start] = 1.0
                rewards[s][a] = point_mass(-10.0)
            elif dest == goal:
                transition[s, a, dest] = 1.0
                rewards[s][a] = point_mass(1.0)
            else:
                transition[s, a, dest] = 1.0
                rewards[s][a] = point_mass(-0.04)
    rho0 = np.zeros(n_states)
    rho0[start] = 1.0
    mdp = FiniteMdp(n_states, n_actions, transition, rewards, gamma, rho0)
    validate_mdp(mdp)
    return mdp


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    gamma: float = 0.9,
    reward_kind: str = "mixture",
    reward_scale: float = 1.0,
) -> FiniteMdp:
    """Random dense MDP: Dirichlet transition rows and either point-mass
    mixture or uniform-interval rewards."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = []
    for s in range(n_states):
        row = []
        for a in range(n_actions):
            if reward_kind == "mixture":
                k = int(rng.integers(2, 4))
                values = rng.uniform(-reward_scale, reward_scale, size=k)
                weights = rng.dirichlet(np.ones(k))
                row.append(PointMassMixture(values, weights))
            elif reward_kind == "uniform":
                lo = rng.uniform(-reward_scale, reward_scale - 0.1)
                row.append(Uniform(lo, lo + rng.uniform(0.1, reward_scale)))
            else:
                raise ValueError(f"unknown reward kind: {reward_kind!r}")
        rewards.append(row)
    rho0 = rng.dirichlet(np.ones(n_states))
    mdp = FiniteMdp(n_states, n_actions, transition, rewards, gamma, rho0)
    validate_mdp(mdp)
    return mdp


def exact_q_values(mdp: FiniteMdp, pi: Policy) -> np.ndarray:
    """Closed-form Q^pi by solving the linear Bellman system on mean rewards."""
    r_bar = mdp.mean_rewards()
    r_pi = (pi.probs * r_bar).sum(axis=1)
    p_pi = np.einsum("sat,ta->st", mdp.transition, pi.probs)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    return r_bar + mdp.gamma * mdp.transition @ v


def optimal_policy_value_iteration(mdp: FiniteMdp, tol: float = 1e-12) -> tuple[np.ndarray, Policy]:
    """Exact value iteration on mean rewards; greedy ties break low."""
    r_bar = mdp.mean_rewards()
    v = np.zeros(mdp.n_states)
    while True:
        q = r_bar + mdp.gamma * mdp.transition @ v
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() <= tol:
            break
        v = v_new
    q = r_bar + mdp.gamma * mdp.transition @ v
    best = q.argmax(axis=1)
    probs = np.zeros((mdp.n_states, mdp.n_actions))
    probs[np.arange(mdp.n_states), best] = 1.0
    return q, Policy(probs)
