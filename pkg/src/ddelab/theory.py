"""Empirical verification of the statistical behavior of offline
distributional evaluation: asymptotic normality of empirical target
quantiles with exact variance formulas and bounds, point-wise concentration
with a density-aware radius, and the fixed-point sandwich for distorted
evaluation.

All exact quantities (densities, variances, bounds) are computed in closed
form by enumerating next-state atoms and integrating reward distributions
piecewise; experiments then check the statistical claims against these
values with explicit binomial/chi-square slack.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import _invert_monotone_cdf, exact_bellman_cdf, _pair_weights
from .distortion import (
    DistortionTable,
    dde_step,
    default_max_iter,
    iterate_fixed_point,
    sandwich_bounds,
)
from .mdp import FiniteMdp, PointMassMixture, Policy, Uniform, uniform_policy
from .quantiles import QuantileTable


@dataclass
class TheoremReport:
    """Outcome of one empirical theorem check."""

    name: str
    statistic: float
    bound_or_target: float
    tolerance: float
    replicates: int
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "statistic": self.statistic,
            "bound_or_target": self.bound_or_target,
            "tolerance": self.tolerance,
            "replicates": self.replicates,
            "passed": self.passed,
            "details": self.details,
        }
        return json.dumps(payload, sort_keys=True)

    CSV_HEADER = "name,statistic,bound_or_target,tolerance,replicates,passed,details"

    def to_csv_row(self) -> list:
        return [
            self.name,
            repr(self.statistic),
            repr(self.bound_or_target),
            repr(self.tolerance),
            str(self.replicates),
            str(self.passed).lower(),
            json.dumps(self.details, sort_keys=True),
        ]


# ---------------------------------------------------------------------------
# Exact target quantities
# ---------------------------------------------------------------------------


def target_density(mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, z):
    """Density of the one-step Bellman target at z (scalar or array):
    sum of p^pi * (1/M) * reward_pdf(z - gamma * Z(s',a',m)).

    Requires a continuous reward at (s,a).
    """
    reward = mdp.rewards[s][a]
    if not reward.is_continuous:
        raise TypeError("target density undefined for point-mass rewards")
    z_arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    w = _pair_weights(mdp, pi, s, a)
    m_atoms = eta.n_atoms
    out = np.zeros_like(z_arr)
    for s2 in range(mdp.n_states):
        for a2 in range(mdp.n_actions):
            if w[s2, a2] == 0.0:
                continue
            shifted = z_arr[:, None] - mdp.gamma * eta.atoms[s2, a2][None, :]
            out += w[s2, a2] * reward.pdf(shifted).sum(axis=1) / m_atoms
    return float(out[0]) if np.isscalar(z) or np.asarray(z).ndim == 0 else out


def target_support(mdp: FiniteMdp, eta: QuantileTable, s: int, a: int) -> tuple[float, float]:
    r_lo, r_hi = mdp.rewards[s][a].support()
    return (
        r_lo + mdp.gamma * float(eta.atoms.min()),
        r_hi + mdp.gamma * float(eta.atoms.max()),
    )


def target_quantile(mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, tau: float) -> float:
    """z_tau of the exact Bellman target by bisection on the closed-form CDF."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    lo, hi = target_support(mdp, eta, s, a)
    out = _invert_monotone_cdf(
        lambda z: np.asarray(exact_bellman_cdf(mdp, pi, eta, s, a, z)),
        np.array([tau]),
        lo - 1e-9,
        hi + 1e-9,
        iters=120,
    )
    return float(out[0])


def empirical_cdf_variance(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, z: float
) -> float:
    """Exact variance over (R, S') of the per-sample target CDF contribution
    F~(z | R, S') = sum_a' pi(a'|s') (1/M) #{m : R + gamma Z(s',a',m) <= z}.

    For each next state the contribution is a step function of the reward;
    its first two moments are integrated piecewise against the reward CDF.
    """
    reward = mdp.rewards[s][a]
    m_atoms = eta.n_atoms
    p_next = mdp.transition[s, a]
    e1_total = 0.0
    e2_total = 0.0
    for s2 in range(mdp.n_states):
        if p_next[s2] == 0.0:
            continue
        thresholds = []
        t_weights = []
        for a2 in range(pi.n_actions):
            p_a = pi.probs[s2, a2]
            if p_a == 0.0:
                continue
            thresholds.append(z - mdp.gamma * eta.atoms[s2, a2])
            t_weights.append(np.full(m_atoms, p_a / m_atoms))
        b = np.concatenate(thresholds)
        wts = np.concatenate(t_weights)
        order = np.argsort(b, kind="stable")
        b = b[order]
        wts = wts[order]
        # value on (b_k, b_{k+1}] is the suffix weight sum from k+1
        suffix = np.concatenate((np.cumsum(wts[::-1])[::-1], [0.0]))
        cuts = np.concatenate(([-np.inf], b, [np.inf]))
        cdf_vals = np.concatenate(([0.0], reward.cdf(b), [1.0]))
        masses = np.diff(cdf_vals)
        e1 = float(masses @ suffix)
        e2 = float(masses @ suffix**2)
        e1_total += p_next[s2] * e1
        e2_total += p_next[s2] * e2
    return float(e2_total - e1_total**2)


def asymptotic_variance(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, s: int, a: int, tau: float
) -> float:
    """Variance of the limiting Gaussian of sqrt(N) * (empirical quantile
    minus exact quantile): Var[F~(z_tau | R, S')] / f(z_tau)^2."""
    z_tau = target_quantile(mdp, pi, eta, s, a, tau)
    f = target_density(mdp, pi, eta, s, a, z_tau)
    if f <= 0:
        raise ValueError(f"target density vanishes at z_tau={z_tau}")
    return float(empirical_cdf_variance(mdp, pi, eta, s, a, z_tau) / f**2)


def variance_lower_bound(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, tau: float, s: int, a: int
) -> tuple[float, float]:
    """(eps', eps'/18/f^2): a lower bound on the asymptotic variance.

    z_bar is the largest atom over all pairs restricted to the lowest 2M/3
    indices; z_under the smallest over indices above M/3.  eps' is the
    smaller of P(R <= z_tau - gamma*z_bar) and P(R > z_tau - gamma*z_under),
    the probabilities that the per-sample CDF contribution is pinned >= 2/3
    or <= 1/3 respectively.
    """
    m_atoms = eta.n_atoms
    if m_atoms < 2:
        raise ValueError("need at least 2 atoms")
    z_tau = target_quantile(mdp, pi, eta, s, a, tau)
    f = target_density(mdp, pi, eta, s, a, z_tau)
    k_hi = int(math.floor(2 * m_atoms / 3))
    k_lo = int(math.floor(m_atoms / 3))
    z_bar = float(eta.atoms[:, :, :k_hi].max())
    z_under = float(eta.atoms[:, :, k_lo:].min())
    reward = mdp.rewards[s][a]
    p_high = float(reward.cdf(z_tau - mdp.gamma * z_bar))
    p_low = 1.0 - float(reward.cdf(z_tau - mdp.gamma * z_under))
    eps_prime = min(p_high, p_low)
    return eps_prime, (eps_prime / 18.0) / f**2


# ---------------------------------------------------------------------------
# Empirical quantiles of sampled one-step targets
# ---------------------------------------------------------------------------


def _sample_empirical_quantiles(
    mdp: FiniteMdp,
    pi: Policy,
    eta: QuantileTable,
    s: int,
    a: int,
    taus: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one dataset of size n at (s,a) and read the empirical target
    quantiles at the requested levels."""
    reward = mdp.rewards[s][a]
    r = np.asarray(reward.sample(rng, size=n_samples), dtype=np.float64)
    s2 = rng.choice(mdp.n_states, size=n_samples, p=mdp.transition[s, a])
    m_atoms = eta.n_atoms
    values, weights = [], []
    uniform = True
    for a2 in range(pi.n_actions):
        p_col = pi.probs[s2, a2]
        live = p_col > 0.0
        if not np.any(live):
            continue
        values.append((r[live, None] + mdp.gamma * eta.atoms[s2[live], a2, :]).ravel())
        w = np.repeat(p_col[live] / (n_samples * m_atoms), m_atoms)
        weights.append(w)
        if not np.all(p_col[live] == p_col[live][0]):
            uniform = False
    vals = np.concatenate(values)
    wts = np.concatenate(weights)
    if uniform and len(weights) == sum(1 for a2 in range(pi.n_actions) if pi.probs[:, a2].max() > 0):
        uniform = np.allclose(wts, wts[0])
    if uniform:
        k = vals.size
        out = np.empty(taus.size)
        for i, tau in enumerate(taus):
            rank = min(max(int(np.ceil(tau * k)), 1), k) - 1
            out[i] = np.partition(vals, rank)[rank]
        return out
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    cum = np.cumsum(wts[order])
    cum[-1] = 1.0
    idx = np.minimum(np.searchsorted(cum, taus, side="left"), vals.size - 1)
    return vals[idx]


# ---------------------------------------------------------------------------
# Assumption certification
# ---------------------------------------------------------------------------


def certify_target_density(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, n_grid: int = 10_000
) -> TheoremReport:
    """Grid check that every (s,a) target CDF is continuous and strictly
    increasing over its support interior (positive density everywhere)."""
    min_density = math.inf
    strictly_increasing = True
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lo, hi = target_support(mdp, eta, s, a)
            pad = 1e-9 * max(1.0, abs(hi - lo))
            grid = np.linspace(lo + pad, hi - pad, n_grid)
            dens = target_density(mdp, pi, eta, s, a, grid)
            min_density = min(min_density, float(dens.min()))
            cdf_vals = exact_bellman_cdf(mdp, pi, eta, s, a, grid)
            if np.any(np.diff(cdf_vals) <= 0):
                strictly_increasing = False
    passed = min_density > 0 and strictly_increasing
    return TheoremReport(
        name="assumption_smooth_increasing_target",
        statistic=min_density,
        bound_or_target=0.0,
        tolerance=0.0,
        replicates=n_grid,
        passed=passed,
        details={"strictly_increasing": strictly_increasing},
    )


def lipschitz_estimate(
    mdp: FiniteMdp, pi: Policy, eta: QuantileTable, n_grid: int = 10_000
) -> float:
    """Max absolute grid slope of the target density times a 1.05 safety factor."""
    worst = 0.0
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lo, hi = target_support(mdp, eta, s, a)
            grid = np.linspace(lo, hi, n_grid)
            dens = target_density(mdp, pi, eta, s, a, grid)
            slopes = np.abs(np.diff(dens) / np.diff(grid))
            worst = max(worst, float(slopes.max()))
    return 1.05 * worst


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def clt_experiment(
    mdp: FiniteMdp,
    pi: Policy,
    eta: QuantileTable,
    s: int,
    a: int,
    tau: float,
    n_samples: int,
    replicates: int,
    rng: np.random.Generator,
    ratio_tolerance: float = 0.1,
) -> TheoremReport:
    """Check the Gaussian limit of sqrt(N)*(empirical - exact quantile).

    Reports the ratio of the replicate variance to the exact asymptotic
    variance, the Bhatia-Davis-style upper bound check, the scaled mean, and
    a Kolmogorov-Smirnov distance to the limiting Gaussian.
    """
    z_tau = target_quantile(mdp, pi, eta, s, a, tau)
    f = target_density(mdp, pi, eta, s, a, z_tau)
    sigma2 = asymptotic_variance(mdp, pi, eta, s, a, tau)
    errors = np.empty(replicates)
    taus = np.array([tau])
    for rep in range(replicates):
        q_hat = _sample_empirical_quantiles(mdp, pi, eta, s, a, taus, n_samples, rng)[0]
        errors[rep] = math.sqrt(n_samples) * (q_hat - z_tau)
    emp_var = float(errors.var(ddof=1))
    ratio = emp_var / sigma2
    upper = tau * (1.0 - tau) / f**2
    sigma = math.sqrt(sigma2)
    sorted_err = np.sort(errors)
    ecdf_hi = np.arange(1, replicates + 1) / replicates
    gauss = 0.5 * (1.0 + np.vectorize(math.erf)(sorted_err / (sigma * math.sqrt(2.0))))
    ks = float(np.maximum(np.abs(ecdf_hi - gauss), np.abs(ecdf_hi - 1.0 / replicates - gauss)).max())
    mean_ok = abs(float(errors.mean())) <= 3.0 * sigma / math.sqrt(replicates)
    passed = abs(ratio - 1.0) <= ratio_tolerance and emp_var <= 1.1 * upper
    return TheoremReport(
        name=f"clt_quantile_error_tau={tau:g}",
        statistic=ratio,
        bound_or_target=1.0,
        tolerance=ratio_tolerance,
        replicates=replicates,
        passed=passed,
        details={
            "empirical_variance": emp_var,
            "asymptotic_variance": sigma2,
            "variance_upper_bound": upper,
            "ks_to_gaussian": ks,
            "scaled_mean": float(errors.mean()),
            "mean_within_3se": mean_ok,
            "n_samples": n_samples,
        },
    )


def concentration_delta(
    f_at_z: float, n_samples: int, n_states: int, n_actions: int, delta: float
) -> float:
    """Density-aware radius (1/f) * sqrt(log(2|S||A|/delta) / (2N))."""
    if f_at_z <= 0:
        raise ValueError("density must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return (1.0 / f_at_z) * math.sqrt(
        math.log(2.0 * n_states * n_actions / delta) / (2.0 * n_samples)
    )


def concentration_experiment(
    mdp: FiniteMdp,
    pi: Policy,
    eta: QuantileTable,
    tau: float,
    n_samples: int,
    delta: float,
    replicates: int,
    rng: np.random.Generator,
) -> TheoremReport:
    """Frequency with which |empirical - exact quantile| >= 2*Delta(s,a,z_tau),
    pooled over replicates and pairs; passes when it is at most delta plus
    two binomial standard errors."""
    n_s, n_a = mdp.n_states, mdp.n_actions
    alpha = lipschitz_estimate(mdp, pi, eta)
    z_taus = np.empty((n_s, n_a))
    radii = np.empty((n_s, n_a))
    hypothesis_met = True
    for s in range(n_s):
        for a in range(n_a):
            z_taus[s, a] = target_quantile(mdp, pi, eta, s, a, tau)
            f = target_density(mdp, pi, eta, s, a, z_taus[s, a])
            radii[s, a] = concentration_delta(f, n_samples, n_s, n_a, delta)
            required = 2.0 * alpha**2 / f**4 * math.log(2.0 * n_s * n_a / delta)
            if n_samples < required:
                hypothesis_met = False
    violations = 0
    taus = np.array([tau])
    for _ in range(replicates):
        for s in range(n_s):
            for a in range(n_a):
                q_hat = _sample_empirical_quantiles(mdp, pi, eta, s, a, taus, n_samples, rng)[0]
                if abs(q_hat - z_taus[s, a]) >= 2.0 * radii[s, a]:
                    violations += 1
    freq = violations / (replicates * n_s * n_a)
    slack = 2.0 * math.sqrt(delta * (1.0 - delta) / replicates)
    return TheoremReport(
        name=f"concentration_2delta_tau={tau:g}",
        statistic=freq,
        bound_or_target=delta,
        tolerance=slack,
        replicates=replicates,
        passed=freq <= delta + slack,
        details={
            "hypothesis_met": hypothesis_met,
            "lipschitz_alpha": alpha,
            "n_samples": n_samples,
            "violations": violations,
        },
    )


def sandwich_check(
    mdp: FiniteMdp,
    pi: Policy,
    phi: DistortionTable,
    m_large: int,
    tol: float,
) -> TheoremReport:
    """Verify the distorted fixed point lies between the per-atom bounds
    derived from the undistorted fixed point, up to projection slack."""
    if m_large < 64:
        raise ValueError("m_large must be >= 64 for acceptable projection slack")
    shape = (mdp.n_states, mdp.n_actions, m_large)
    if phi.phi.shape != shape:
        raise ValueError(f"phi shape {phi.phi.shape} != {shape}")
    lo, hi = mdp.return_range()
    eta0 = QuantileTable.constant(shape, 0.5 * (lo + hi))
    fp_tol = 1e-9
    max_iter = default_max_iter(mdp.gamma, fp_tol)
    zero = DistortionTable.zeros(shape)
    fp_plain, rep_plain = iterate_fixed_point(
        lambda eta: dde_step(mdp, pi, eta, zero), eta0, fp_tol, max_iter
    )
    fp_dist, rep_dist = iterate_fixed_point(
        lambda eta: dde_step(mdp, pi, eta, phi), eta0, fp_tol, max_iter
    )
    if not (rep_plain.converged and rep_dist.converged):
        raise RuntimeError("fixed-point iteration did not converge")
    lower, upper = sandwich_bounds(fp_plain, phi, mdp.gamma)
    slack = tol + 2.0 * (hi - lo) / m_large
    worst = float(
        np.maximum(lower - slack - fp_dist.atoms, fp_dist.atoms - upper - slack).max()
    )
    return TheoremReport(
        name="distorted_fixed_point_sandwich",
        statistic=worst,
        bound_or_target=0.0,
        tolerance=slack,
        replicates=1,
        passed=worst <= 0.0,
        details={
            "m_large": m_large,
            "iterations_plain": rep_plain.iterations,
            "iterations_distorted": rep_dist.iterations,
            "phi_sup": phi.sup,
            "phi_inf": phi.inf,
        },
    )


# ---------------------------------------------------------------------------
# Reference setup for statistical checks
# ---------------------------------------------------------------------------


def reference_mdp() -> FiniteMdp:
    """One state, one action, Uniform(0,1) reward, gamma = 0.5: the target
    density is piecewise constant and every exact quantity is cheap."""
    return FiniteMdp(
        n_states=1,
        n_actions=1,
        transition=np.ones((1, 1, 1)),
        rewards=[[Uniform(0.0, 1.0)]],
        gamma=0.5,
        rho0=np.ones(1),
    )


def reference_setup(n_atoms: int = 32) -> tuple[FiniteMdp, Policy, QuantileTable]:
    """Reference MDP with its projected-operator fixed point at M atoms."""
    mdp = reference_mdp()
    pi = uniform_policy(1, 1)
    shape = (1, 1, n_atoms)
    zero = DistortionTable.zeros(shape)
    eta0 = QuantileTable.constant(shape, 1.0)
    eta, report = iterate_fixed_point(
        lambda eta: dde_step(mdp, pi, eta, zero),
        eta0,
        1e-12,
        default_max_iter(mdp.gamma, 1e-12),
    )
    if not report.converged:
        raise RuntimeError("reference fixed point did not converge")
    return mdp, pi, eta
