"""Ensemble-driven non-uniform pessimism: per-quantile dispersion across L
predictors, the penalty table phi = beta * sigma-hat, quantile-Huber
regression toward distorted targets, and Polyak target mixing.

Member dispersion at a quantile index acts as an uncertainty surrogate: the
less predictable a quantile value is from the data, the larger its penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .distortion import DistortionTable
from .mdp import Policy
from .quantiles import QuantileTable

Batch = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # s, a, r, s_next


@dataclass
class SigmaTable:
    """Per-(s,a,m) empirical mean and population standard deviation across
    ensemble target tables."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma shapes differ")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be entrywise nonnegative")


@dataclass
class Ensemble:
    """L online quantile tables, their slow targets, and update hyperparameters.

    kappa_huber is the Huber-zone width of the regression loss; kappa_polyak
    the target mixing rate (the two roles share a symbol in common usage, so
    they are split here).  penalty_shape selects the per-quantile penalty
    ("per_tau") or its per-(s,a) flat average ("uniform"), the matched-budget
    baseline.
    """

    online: list
    targets: list
    beta: float
    gamma: float
    kappa_polyak: float = 0.005
    kappa_huber: float = 1.0
    learning_rate: float = 0.1
    enumerate_next_actions: bool = False
    bootstrap: bool = False
    penalty_shape: str = "per_tau"

    def __post_init__(self):
        if len(self.online) < 2:
            raise ValueError("ensemble needs L >= 2 members (sigma undefined for L=1)")
        if len(self.online) != len(self.targets):
            raise ValueError("online and target member counts differ")
        shape = self.online[0].atoms.shape
        for table in list(self.online) + list(self.targets):
            if table.atoms.shape != shape:
                raise ValueError("all member tables must share one shape")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not (0.0 < self.kappa_polyak <= 1.0):
            raise ValueError("kappa_polyak must lie in (0, 1]")
        if self.kappa_huber <= 0:
            raise ValueError("kappa_huber must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.penalty_shape not in ("per_tau", "uniform"):
            raise ValueError(f"unknown penalty_shape: {self.penalty_shape!r}")

    @property
    def n_members(self) -> int:
        return len(self.online)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.online[0].atoms.shape


def init_ensemble(
    n_members: int,
    shape: tuple[int, int, int],
    scheme: tuple,
    rng: np.random.Generator,
    *,
    beta: float = 0.5,
    gamma: float = 0.99,
    **hyper,
) -> Ensemble:
    """Initialize L online tables per the scheme; targets start as copies.

    scheme is ("constant", c) or ("uniform_random", lo, hi).
    """
    if n_members < 2:
        raise ValueError("ensemble needs L >= 2 members")
    kind = scheme[0]
    online = []
    for _ in range(n_members):
        if kind == "constant":
            online.append(QuantileTable.constant(shape, scheme[1]))
        elif kind == "uniform_random":
            online.append(QuantileTable.uniform_random(shape, scheme[1], scheme[2], rng))
        else:
            raise ValueError(f"unknown init scheme: {kind!r}")
    targets = [t.copy() for t in online]
    return Ensemble(online, targets, beta=beta, gamma=gamma, **hyper)


def ensemble_stats(targets: list) -> SigmaTable:
    """Empirical mean and population (divide-by-L) std over member tables."""
    if len(targets) < 2:
        raise ValueError("need at least two tables for dispersion")
    stack = np.stack([t.atoms for t in targets])
    return SigmaTable(stack.mean(axis=0), stack.std(axis=0, ddof=0))


def build_phi(stats: SigmaTable, beta: float) -> DistortionTable:
    """Penalty table beta * sigma-hat; nonnegative by construction."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return DistortionTable(beta * stats.sigma)


def effective_sigma(stats: SigmaTable, penalty_shape: str) -> np.ndarray:
    """sigma-hat as used by the regression penalty: per-quantile, or its
    per-(s,a) average broadcast flat (same total budget, uniform shape)."""
    if penalty_shape == "per_tau":
        return stats.sigma
    if penalty_shape == "uniform":
        return np.broadcast_to(
            stats.sigma.mean(axis=-1, keepdims=True), stats.sigma.shape
        )
    raise ValueError(f"unknown penalty_shape: {penalty_shape!r}")


def distorted_target(
    stats: SigmaTable,
    beta: float,
    gamma: float,
    s: int,
    a: int,
    r: float,
    s_next: int,
    a_next: int,
    j,
) -> float | np.ndarray:
    """Regression target r + gamma * mu(s',a',j) - beta * sigma(s,a,j).

    The penalty is indexed by the current pair (s,a), the bootstrap mean by
    the next pair.  j may be an index array.
    """
    out = r + gamma * stats.mu[s_next, a_next, j] - beta * stats.sigma[s, a, j]
    return float(out) if np.isscalar(j) else out


# ---------------------------------------------------------------------------
# Regression step
# ---------------------------------------------------------------------------


def _member_targets(
    sigma_eff: np.ndarray,
    mu: np.ndarray,
    beta: float,
    gamma: float,
    batch: Batch,
    pi: Policy,
    rng: np.random.Generator,
    enumerate_next: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Target values (B, K) and weights (B, K) with per-row weight sum M.

    Sampled mode draws one a' per tuple; enumeration expands all next actions
    weighted by the policy.
    """
    s, a, r, s_next = batch
    n_m = mu.shape[2]
    pen = beta * sigma_eff[s, a, :]  # (B, M)
    if enumerate_next:
        # values[b, a2, j], weights pi(a2 | s'_b) applied to each j
        vals = r[:, None, None] + gamma * mu[s_next, :, :] - pen[:, None, :]
        w = np.repeat(pi.probs[s_next, :][:, :, None], n_m, axis=2)
        b = s.size
        return vals.reshape(b, -1), w.reshape(b, -1)
    cum = np.cumsum(pi.probs, axis=1)
    u = rng.random(s.size)
    a2 = (u[:, None] > cum[s_next]).sum(axis=1)
    vals = r[:, None] + gamma * mu[s_next, a2, :] - pen
    return vals, np.ones_like(vals)


def regression_loss_grad(
    atoms: np.ndarray,
    batch_pairs: tuple[np.ndarray, np.ndarray],
    targets: np.ndarray,
    target_weights: np.ndarray,
    kappa_huber: float,
) -> tuple[float, np.ndarray]:
    """Quantile-Huber regression loss over a batch and its exact subgradient.

    atoms: (S, A, M) member table; targets/target_weights: (B, K) with row
    weight sum M.  Loss is (1/(B*M)) * sum_b sum_i sum_k w * rho_{tau_i}(T - Z_i);
    the returned gradient has the table's shape.
    """
    s, a = batch_pairs
    b, k = targets.shape
    n_m = atoms.shape[2]
    tau_hat = (np.arange(1, n_m + 1) - 0.5) / n_m
    z = atoms[s, a, :]  # (B, M)
    u = targets[:, :, None] - z[:, None, :]  # (B, K, M)
    abs_u = np.abs(u)
    huber = np.where(abs_u < kappa_huber, 0.5 * u * u, kappa_huber * (abs_u - 0.5 * kappa_huber))
    asym = np.abs(tau_hat[None, None, :] - (u < 0))
    w = target_weights[:, :, None]
    norm = 1.0 / (b * n_m)
    loss = float((w * asym * huber).sum() * norm)
    psi = asym * np.clip(u, -kappa_huber, kappa_huber)  # d rho / d u
    g_rows = -(w * psi).sum(axis=1) * norm  # (B, M), d loss / d Z at each row
    grad = np.zeros_like(atoms)
    np.add.at(grad, (s, a), g_rows)
    return loss, grad


def _grad_rows_numpy(
    z_rows: np.ndarray,
    targets: np.ndarray,
    target_weights: np.ndarray | None,
    kappa_huber: float,
    tau_hat: np.ndarray,
    norm: float,
) -> np.ndarray:
    """Fused per-row loss subgradient; agrees with regression_loss_grad."""
    u = targets[:, :, None] - z_rows[:, None, :]  # (B, K, M)
    w = tau_hat[None, None, :] - (u < 0)
    np.abs(w, out=w)
    np.clip(u, -kappa_huber, kappa_huber, out=u)
    u *= w
    if target_weights is not None:
        u *= target_weights[:, :, None]
    return u.sum(axis=1) * (-norm)


try:  # single-pass kernel; the numpy path above is the reference
    from numba import njit as _njit

    @_njit(cache=True)
    def _grad_rows_kernel(z_rows, targets, target_weights, kappa, tau_hat, norm, out):
        n_b, n_k = targets.shape
        n_m = z_rows.shape[1]
        for b in range(n_b):
            for k in range(n_k):
                t = targets[b, k]
                wk = target_weights[b, k]
                for i in range(n_m):
                    u = t - z_rows[b, i]
                    c = -kappa if u < -kappa else (kappa if u > kappa else u)
                    w = tau_hat[i] - 1.0 if u < 0 else tau_hat[i]
                    if w < 0.0:
                        w = -w
                    out[b, i] -= norm * wk * w * c

    def _grad_rows(z_rows, targets, target_weights, kappa_huber, tau_hat, norm):
        if target_weights is None:
            target_weights = np.ones_like(targets)
        out = np.zeros_like(z_rows)
        _grad_rows_kernel(z_rows, targets, target_weights, kappa_huber, tau_hat, norm, out)
        return out

except ImportError:  # pragma: no cover
    _grad_rows = _grad_rows_numpy


def ensemble_regression_step(
    ens: Ensemble, batch: Batch, pi: Policy, rng: np.random.Generator
) -> Ensemble:
    """One subgradient step of every member toward its distorted targets.

    The sigma/mu snapshot is taken once from the target tables and shared by
    all members within the step; targets themselves are untouched.
    """
    s, a, r, s_next = (np.asarray(x) for x in batch)
    if s.size == 0:
        raise ValueError("empty batch")
    stats = ensemble_stats(ens.targets)
    sigma_eff = effective_sigma(stats, ens.penalty_shape)
    n_m = ens.shape[2]
    tau_hat = (np.arange(1, n_m + 1) - 0.5) / n_m
    new_online = []
    for member in ens.online:
        mb = (s, a, r, s_next)
        if ens.bootstrap:
            idx = rng.integers(0, s.size, size=s.size)
            mb = (s[idx], a[idx], r[idx], s_next[idx])
        targets, weights = _member_targets(
            sigma_eff, stats.mu, ens.beta, ens.gamma, mb, pi, rng, ens.enumerate_next_actions
        )
        g_rows = _grad_rows(
            member.atoms[mb[0], mb[1], :],
            targets,
            None if not ens.enumerate_next_actions else weights,
            ens.kappa_huber,
            tau_hat,
            1.0 / (mb[0].size * n_m),
        )
        grad = np.zeros_like(member.atoms)
        np.add.at(grad, (mb[0], mb[1]), g_rows)
        new_online.append(QuantileTable(member.atoms - ens.learning_rate * grad))
    return replace(ens, online=new_online)


def polyak_update(ens: Ensemble) -> Ensemble:
    """targets <- (1 - kappa) * targets + kappa * online, entrywise."""
    k = ens.kappa_polyak
    new_targets = [
        QuantileTable((1.0 - k) * tgt.atoms + k * onl.atoms)
        for tgt, onl in zip(ens.targets, ens.online)
    ]
    return replace(ens, targets=new_targets)


def sample_batch(dataset, size: int, rng: np.random.Generator) -> Batch:
    """Uniform with-replacement minibatch from an offline dataset."""
    idx = rng.integers(0, len(dataset), size=size)
    return dataset.s[idx], dataset.a[idx], dataset.r[idx], dataset.s_next[idx]
