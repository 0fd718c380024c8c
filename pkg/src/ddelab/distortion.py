"""Quantile distortion, distorted distributional evaluation (DDE), the
uniform-pessimism baseline, and fixed-point iteration machinery.

The distortion operator subtracts a level-dependent penalty phi(s,a,tau_m)
from each atom; composing it with the projected Bellman operator yields the
DDE iteration, a gamma-contraction whose fixed point is sandwiched around
the undistorted fixed point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bellman import empirical_bellman_quantiles, exact_bellman_quantiles
from .mdp import FiniteMdp, MissingDataError, OfflineDataset, Policy
from .quantiles import QuantileTable, sup_wasserstein


@dataclass
class DistortionTable:
    """Penalty values phi(s,a,tau_m) on the (S, A, M) atom grid.

    With the pessimism flag set (the default), entries must be nonnegative so
    the distortion only pushes quantiles down.
    """

    phi: np.ndarray
    pessimistic: bool = True

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 3:
            raise ValueError("phi must have shape (n_states, n_actions, M)")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi entries must be finite")
        if self.pessimistic and np.any(self.phi < 0):
            raise ValueError("negative phi entries with the pessimism flag set")

    @classmethod
    def zeros(cls, shape: tuple[int, int, int]) -> "DistortionTable":
        return cls(np.zeros(shape))

    @classmethod
    def constant(cls, shape: tuple[int, int, int], value: float) -> "DistortionTable":
        return cls(np.full(shape, float(value)), pessimistic=value >= 0)

    @classmethod
    def from_per_pair(cls, c: np.ndarray, n_atoms: int) -> "DistortionTable":
        """Broadcast a per-(s,a) constant over the atom axis (uniform pessimism)."""
        c = np.asarray(c, dtype=np.float64)
        return cls(np.repeat(c[:, :, None], n_atoms, axis=2), pessimistic=bool(np.all(c >= 0)))

    @property
    def sup(self) -> float:
        return float(self.phi.max())

    @property
    def inf(self) -> float:
        return float(self.phi.min())


def distort(eta: QuantileTable, phi: DistortionTable) -> QuantileTable:
    """Apply the distortion: atoms minus phi, re-sorted per (s,a)."""
    if eta.atoms.shape != phi.phi.shape:
        raise ValueError(f"shape mismatch: {eta.atoms.shape} vs {phi.phi.shape}")
    return QuantileTable(eta.atoms - phi.phi)


# ---------------------------------------------------------------------------
# Evaluation sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSource:
    """Empirical Bellman backup source: an offline dataset plus the scalars
    the dataset itself does not carry (discount, return range for the
    missing-pair fallback).

    missing: "clamp" replaces targets of unseen pairs by the worst-case
    return (pessimistic fallback); "error" raises MissingDataError.
    """

    dataset: OfflineDataset
    gamma: float
    return_range: tuple[float, float]
    missing: str = "clamp"

    @classmethod
    def for_mdp(cls, dataset: OfflineDataset, mdp: FiniteMdp, missing: str = "clamp") -> "DatasetSource":
        return cls(dataset, mdp.gamma, mdp.return_range(), missing)


Source = FiniteMdp | DatasetSource


def _target_quantiles(source: Source, pi: Policy, eta: QuantileTable) -> np.ndarray:
    """Projected Bellman-target atoms for every (s,a), shape (S, A, M)."""
    n_s, n_a, n_m = eta.atoms.shape
    out = np.empty((n_s, n_a, n_m))
    if isinstance(source, FiniteMdp):
        for s in range(n_s):
            for a in range(n_a):
                out[s, a] = exact_bellman_quantiles(source, pi, eta, s, a)
        return out
    worst = source.return_range[0]
    for s in range(n_s):
        for a in range(n_a):
            if source.dataset.counts[s, a] == 0:
                if source.missing == "error":
                    raise MissingDataError(f"no data for pair (s={s}, a={a})")
                out[s, a] = worst
                continue
            out[s, a] = empirical_bellman_quantiles(source.dataset, pi, eta, source.gamma, s, a)
    return out


def dde_step(source: Source, pi: Policy, eta_k: QuantileTable, phi: DistortionTable) -> QuantileTable:
    """One distorted evaluation step: project the Bellman target, then subtract
    phi on the same atom grid and restore the sorted canonical form."""
    targets = _target_quantiles(source, pi, eta_k)
    if targets.shape != phi.phi.shape:
        raise ValueError(f"shape mismatch: targets {targets.shape} vs phi {phi.phi.shape}")
    return QuantileTable(targets - phi.phi)


def uniform_pessimism_step(source: Source, pi: Policy, eta_k: QuantileTable, c: np.ndarray) -> QuantileTable:
    """Uniform baseline: subtract a per-(s,a) constant from every quantile."""
    phi = DistortionTable.from_per_pair(np.asarray(c, dtype=np.float64), eta_k.n_atoms)
    return dde_step(source, pi, eta_k, phi)


# ---------------------------------------------------------------------------
# Fixed points
# ---------------------------------------------------------------------------


@dataclass
class FixedPointReport:
    """Trace of a fixed-point iteration in the sup-infinity-Wasserstein metric."""

    iterations: int
    final_delta: float
    per_step_ratios: list[float]
    converged: bool
    tolerance: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "iterations": self.iterations,
                "final_delta": self.final_delta,
                "per_step_ratios": self.per_step_ratios,
                "converged": self.converged,
                "tolerance": self.tolerance,
            }
        )


def default_max_iter(gamma: float, tol: float) -> int:
    """Generous iteration budget: 10x the geometric-decay estimate."""
    return max(1, int(math.ceil(10.0 * math.log(tol) / math.log(gamma))))


def iterate_fixed_point(
    step, eta0: QuantileTable, tol: float = 1e-9, max_iter: int = 2000
) -> tuple[QuantileTable, FixedPointReport]:
    """Iterate eta <- step(eta) until the sup-W_inf step change is <= tol.

    Non-convergence within max_iter is reported (converged=False), not raised.
    Step-change ratios are recorded only while the previous change sits well
    above float cancellation noise (1e-6 x atom scale); below that the ratio
    carries no information about the operator.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    eta = eta0
    prev_delta = None
    ratios: list[float] = []
    delta = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = step(eta)
        delta = sup_wasserstein(nxt, eta, math.inf)
        noise_floor = 1e-6 * max(1.0, float(np.abs(nxt.atoms).max()))
        if prev_delta is not None and prev_delta > noise_floor:
            ratios.append(delta / prev_delta)
        prev_delta = delta
        eta = nxt
        if delta <= tol:
            break
    return eta, FixedPointReport(
        iterations=iterations,
        final_delta=float(delta),
        per_step_ratios=ratios,
        converged=delta <= tol,
        tolerance=tol,
    )


def contraction_ratio(step, mu: QuantileTable, nu: QuantileTable, p) -> float:
    """sup-W_p distance ratio after/before applying the operator once."""
    denom = sup_wasserstein(mu, nu, p)
    if denom == 0.0:
        raise ValueError("mu and nu coincide; contraction ratio undefined")
    return sup_wasserstein(step(mu), step(nu), p) / denom


def sandwich_bounds(
    f_inf: QuantileTable, phi: DistortionTable, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom bounds bracketing the distorted fixed point.

    lower = F_inf - phi - gamma*sup(phi)/(1-gamma) and
    upper = F_inf - phi - gamma*inf(phi)/(1-gamma), evaluated at the same
    (s,a,m) grid.  Returned as raw arrays (not re-sorted tables) so each entry
    stays aligned with its quantile level even when phi is non-monotone.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma out of range (0,1): {gamma}")
    base = f_inf.atoms - phi.phi
    lower = base - gamma * phi.sup / (1.0 - gamma)
    upper = base - gamma * phi.inf / (1.0 - gamma)
    return lower, upper
