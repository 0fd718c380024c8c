"""Tabular distorted-distributional actor critic for discrete actions:
action-value extraction, risk-distorted scores, epsilon-greedy improvement,
the offline training loop, and Monte-Carlo policy evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import (
    Ensemble,
    ensemble_regression_step,
    ensemble_stats,
    init_ensemble,
    polyak_update,
    sample_batch,
)
from .mdp import FiniteMdp, OfflineDataset, Policy, _sample_actions_grouped, \
    _sample_next_states_grouped, _sample_rewards_grouped
from .quantiles import QuantileTable


def q_value(ens: Ensemble, s: int, a: int) -> float:
    """Mean over members and atoms of the online tables."""
    return float(np.mean([member.atoms[s, a] for member in ens.online]))


def _cvar_of_sorted_atoms(atoms: np.ndarray, alpha: float) -> float:
    """Exact CVaR(alpha) of a uniform-weight atom distribution.

    Mean of the lowest alpha fraction, with fractional weight on the atom
    straddling the alpha boundary.
    """
    if alpha <= 0 or alpha > 1:
        raise ValueError(f"risk level must lie in (0, 1], got {alpha}")
    m = atoms.size
    k = alpha * m
    k_full = int(np.floor(k + 1e-12))
    total = atoms[:k_full].sum() / m
    if k_full < m and k - k_full > 1e-12:
        total += (alpha - k_full / m) * atoms[k_full]
    return float(total / alpha)


def risk_q(ens: Ensemble, s: int, a: int, alpha: float) -> float:
    """Member-averaged CVaR(alpha) of the online return distributions."""
    return float(
        np.mean([_cvar_of_sorted_atoms(member.atoms[s, a], alpha) for member in ens.online])
    )


def _cvar_rows(stack: np.ndarray, alpha: float) -> np.ndarray:
    """Vectorized CVaR(alpha) along the sorted last axis; same arithmetic as
    _cvar_of_sorted_atoms."""
    m = stack.shape[-1]
    k = alpha * m
    k_full = int(np.floor(k + 1e-12))
    total = np.zeros(stack.shape[:-1])
    if k_full > 0:
        total += np.cumsum(stack, axis=-1)[..., k_full - 1] / m
    if k_full < m and k - k_full > 1e-12:
        total += (alpha - k_full / m) * stack[..., k_full]
    return total / alpha


def _scores(ens: Ensemble, mode) -> np.ndarray:
    if mode == "mean":
        return np.mean([member.atoms for member in ens.online], axis=0).mean(axis=-1)
    kind, alpha = mode
    if kind != "cvar":
        raise ValueError(f"unknown score mode: {mode!r}")
    stack = np.stack([member.atoms for member in ens.online])
    return _cvar_rows(stack, alpha).mean(axis=0)


def greedy_policy(ens: Ensemble, mode="mean", epsilon: float = 0.0) -> Policy:
    """Epsilon-greedy policy over mean or CVaR scores.

    mode is "mean" or ("cvar", alpha).  Argmax ties break toward the lowest
    action index.
    """
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    scores = _scores(ens, mode)
    n_s, n_a = scores.shape
    probs = np.full((n_s, n_a), epsilon / n_a)
    best = np.argmax(scores, axis=1)  # first occurrence wins ties
    probs[np.arange(n_s), best] += 1.0 - epsilon
    return Policy(probs)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class DdacConfig:
    """Hyperparameters of the tabular offline training loop."""

    n_members: int = 10
    n_atoms: int = 32
    beta: float = 0.5
    gamma: float = 0.99
    learning_rate: float = 0.1
    kappa_huber: float = 1.0
    kappa_polyak: float = 0.005
    epsilon: float = 0.1
    steps: int = 2000
    batch_size: int = 128
    eval_every: int = 200
    init_scheme: tuple = ("uniform_random", 0.0, 1.0)
    policy_mode: object = "mean"  # "mean" or ("cvar", alpha)
    penalty_shape: str = "per_tau"
    enumerate_next_actions: bool = False
    bootstrap: bool = False
    eval_episodes: int = 200
    eval_horizon: int = 200


def train_ddac_tabular(
    dataset: OfflineDataset,
    config: DdacConfig,
    rng: np.random.Generator,
    eval_mdp: FiniteMdp | None = None,
) -> tuple[Ensemble, Policy, list[dict]]:
    """Offline actor-critic loop: regression step, Polyak mixing, and a policy
    refresh from the current scores every step.

    Metrics rows are logged every eval_every steps (and at the end); online
    mean/CVaR(0.1) returns are filled in when eval_mdp is given.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    shape = (dataset.n_states, dataset.n_actions, config.n_atoms)
    ens = init_ensemble(
        config.n_members,
        shape,
        config.init_scheme,
        rng,
        beta=config.beta,
        gamma=config.gamma,
        learning_rate=config.learning_rate,
        kappa_huber=config.kappa_huber,
        kappa_polyak=config.kappa_polyak,
        enumerate_next_actions=config.enumerate_next_actions,
        bootstrap=config.bootstrap,
        penalty_shape=config.penalty_shape,
    )
    policy = greedy_policy(ens, config.policy_mode, config.epsilon)
    metrics: list[dict] = []
    # one eval stream drawn up front so the training stream is independent of
    # the eval cadence
    eval_rng = np.random.default_rng(int(rng.integers(2**63)))

    def log(step: int) -> None:
        row = {
            "step": step,
            "mean_return": np.nan,
            "cvar10": np.nan,
            "mean_q": float(np.mean([m.atoms for m in ens.online])),
            "mean_sigma": float(ensemble_stats(ens.targets).sigma.mean()),
        }
        if eval_mdp is not None:
            result = evaluate_policy(
                eval_mdp,
                greedy_policy(ens, config.policy_mode, 0.0),
                config.eval_episodes,
                config.eval_horizon,
                eval_rng,
            )
            row["mean_return"] = result["mean"]
            row["cvar10"] = result["cvar10"]
        metrics.append(row)

    for step in range(1, config.steps + 1):
        batch = sample_batch(dataset, config.batch_size, rng)
        ens = ensemble_regression_step(ens, batch, policy, rng)
        ens = polyak_update(ens)
        policy = greedy_policy(ens, config.policy_mode, config.epsilon)
        if step % config.eval_every == 0 or step == config.steps:
            log(step)
    if config.steps == 0:
        log(0)
    return ens, greedy_policy(ens, config.policy_mode, 0.0), metrics


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def cvar_of_samples(samples: np.ndarray, alpha: float = 0.1) -> float:
    """Empirical CVaR: mean of the lowest alpha fraction with fractional
    weighting of the boundary sample."""
    return _cvar_of_sorted_atoms(np.sort(np.asarray(samples, dtype=np.float64)), alpha)


def evaluate_policy(
    mdp: FiniteMdp,
    policy: Policy,
    n_episodes: int,
    horizon: int,
    rng: np.random.Generator,
) -> dict:
    """Monte-Carlo rollouts from rho0; reports mean and CVaR(0.1) returns."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    states = rng.choice(mdp.n_states, size=n_episodes, p=mdp.rho0)
    actions = _sample_actions_grouped(policy, states, rng)
    returns = np.zeros(n_episodes)
    disc = 1.0
    for _ in range(horizon):
        returns += disc * _sample_rewards_grouped(mdp, states, actions, rng)
        states = _sample_next_states_grouped(mdp, states, actions, rng)
        actions = _sample_actions_grouped(policy, states, rng)
        disc *= mdp.gamma
    return {
        "mean": float(returns.mean()),
        "cvar10": cvar_of_samples(returns, 0.1),
        "samples": returns,
    }
