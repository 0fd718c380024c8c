"""Atom-based return distributions: CDFs, quantile functions, exact
Wasserstein metrics, the W1 quantile projection, and the quantile Huber loss.

A return distribution over a state-action pair is represented either as a
row of M equally weighted atoms (one row of a QuantileTable) or as a general
finite AtomMixture.  All metric computations are exact (merged quantile
breakpoints), never sample-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHT_ATOL = 1e-12


@dataclass
class AtomMixture:
    """Finite mixture of point masses with arbitrary nonnegative weights."""

    values: np.ndarray
    weights: np.ndarray
    cum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.values.size == 0 or self.values.size != self.weights.size:
            raise ValueError("values and weights must be nonempty and the same length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mixture values must be finite")
        if np.any(self.weights < -WEIGHT_ATOL) or abs(self.weights.sum() - 1.0) > WEIGHT_ATOL:
            raise ValueError(f"weights must sum to 1 (got {self.weights.sum()!r})")
        order = np.argsort(self.values, kind="stable")
        self.values = self.values[order]
        self.weights = np.maximum(self.weights[order], 0.0)
        self.cum = np.cumsum(self.weights)
        self.cum[-1] = 1.0

    @classmethod
    def from_atoms(cls, atoms: np.ndarray) -> "AtomMixture":
        atoms = np.asarray(atoms, dtype=np.float64).ravel()
        return cls(atoms, np.full(atoms.size, 1.0 / atoms.size))

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def cdf(self, z):
        idx = np.searchsorted(self.values, np.asarray(z, dtype=np.float64), side="right")
        padded = np.concatenate(([0.0], self.cum))
        return padded[idx]

    def inverse_cdf(self, tau):
        return _weighted_quantile(self.values, self.cum, tau)


def _weighted_quantile(values: np.ndarray, cum: np.ndarray, tau):
    """Leftmost value whose cumulative weight >= tau; tau=0 gives the minimum."""
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0.0) or np.any(tau_arr > 1.0):
        raise ValueError(f"tau must lie in [0, 1], got {tau!r}")
    idx = np.searchsorted(cum, tau_arr, side="left")
    idx = np.minimum(idx, values.size - 1)
    out = values[idx]
    return float(out) if np.isscalar(tau) or tau_arr.ndim == 0 else out


def _as_mixture(d) -> AtomMixture:
    if isinstance(d, AtomMixture):
        return d
    return AtomMixture.from_atoms(np.asarray(d, dtype=np.float64))


def cdf(d, z):
    """Right-continuous step CDF of an atom row or mixture at z."""
    return _as_mixture(d).cdf(z)


def inverse_cdf(d, tau):
    """Quantile function inf{x : tau <= F(x)} of an atom row or mixture."""
    return _as_mixture(d).inverse_cdf(tau)


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------


def wasserstein(a, b, p) -> float:
    """Exact p-Wasserstein distance between two finite atom distributions.

    Computed by integrating |quantile difference|^p over the merged
    breakpoints of the two quantile functions; p = math.inf gives the
    supremum over tau.
    """
    if p != math.inf and p < 1:
        raise ValueError(f"order p must be >= 1 or inf, got {p}")
    ma, mb = _as_mixture(a), _as_mixture(b)
    if ma.values.size == mb.values.size and np.array_equal(ma.cum, mb.cum):
        diff = np.abs(ma.values - mb.values)
        if p == math.inf:
            return float(diff.max())
        return float((np.diff(np.concatenate(([0.0], ma.cum))) @ diff**p) ** (1.0 / p))
    breaks = np.union1d(ma.cum, mb.cum)
    widths = np.diff(np.concatenate(([0.0], breaks)))
    qa = ma.values[np.minimum(np.searchsorted(ma.cum, breaks, side="left"), ma.values.size - 1)]
    qb = mb.values[np.minimum(np.searchsorted(mb.cum, breaks, side="left"), mb.values.size - 1)]
    diff = np.abs(qa - qb)
    if p == math.inf:
        return float(diff[widths > 0].max())
    return float((widths @ diff**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Quantile tables
# ---------------------------------------------------------------------------


@dataclass
class QuantileTable:
    """M nondecreasing atom values per (s,a): a parametric return distribution.

    The canonical form keeps each row sorted; every constructor re-sorts, so
    operators that can cross quantiles (distortion with arbitrary penalties)
    always hand back a valid quantile function.
    """

    atoms: np.ndarray  # (S, A, M)

    def __post_init__(self):
        self.atoms = np.sort(np.asarray(self.atoms, dtype=np.float64), axis=-1)
        if self.atoms.ndim != 3:
            raise ValueError("atoms must have shape (n_states, n_actions, M)")

    @property
    def n_states(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_actions(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[2]

    @property
    def tau_levels(self) -> np.ndarray:
        """tau_m = m / M for m = 1..M."""
        m = self.atoms.shape[2]
        return np.arange(1, m + 1) / m

    @property
    def tau_hats(self) -> np.ndarray:
        """Midpoints (m - 0.5) / M targeted by the m-th atom."""
        m = self.atoms.shape[2]
        return (np.arange(1, m + 1) - 0.5) / m

    @classmethod
    def constant(cls, shape: tuple[int, int, int], value: float) -> "QuantileTable":
        return cls(np.full(shape, float(value)))

    @classmethod
    def uniform_random(
        cls, shape: tuple[int, int, int], lo: float, hi: float, rng: np.random.Generator
    ) -> "QuantileTable":
        return cls(rng.uniform(lo, hi, size=shape))

    def copy(self) -> "QuantileTable":
        return QuantileTable(self.atoms.copy())

    def row(self, s: int, a: int) -> np.ndarray:
        return self.atoms[s, a]

    def row_mixture(self, s: int, a: int) -> AtomMixture:
        return AtomMixture.from_atoms(self.atoms[s, a])

    def save_csv(self, path: str | Path) -> None:
        """Rows ``s,a,m,value`` (m is 1-based) under a ``# M=<int>`` header."""
        lines = [f"# M={self.n_atoms}"]
        for s in range(self.n_states):
            for a in range(self.n_actions):
                for m in range(self.n_atoms):
                    lines.append(f"{s},{a},{m + 1},{self.atoms[s, a, m]:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_csv(cls, path: str | Path) -> "QuantileTable":
        m_atoms = None
        entries = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line.lstrip("# ").partition("=")
                if key.strip() == "M":
                    m_atoms = int(val)
                continue
            f0, f1, f2, f3 = line.split(",")
            entries.append((int(f0), int(f1), int(f2), float(f3)))
        if m_atoms is None:
            raise ValueError("missing '# M=' header")
        n_s = max(e[0] for e in entries) + 1
        n_a = max(e[1] for e in entries) + 1
        atoms = np.empty((n_s, n_a, m_atoms))
        for s, a, m, v in entries:
            atoms[s, a, m - 1] = v
        return cls(atoms)


def sup_wasserstein(eta_a: QuantileTable, eta_b: QuantileTable, p) -> float:
    """Supremum over (s,a) of the per-pair p-Wasserstein distance."""
    if eta_a.atoms.shape != eta_b.atoms.shape:
        raise ValueError(
            f"shape mismatch: {eta_a.atoms.shape} vs {eta_b.atoms.shape}"
        )
    diff = np.abs(eta_a.atoms - eta_b.atoms)
    if p == math.inf:
        return float(diff.max())
    if p < 1:
        raise ValueError(f"order p must be >= 1 or inf, got {p}")
    per_pair = (diff**p).mean(axis=-1) ** (1.0 / p)
    return float(per_pair.max())


def project_w1(target, n_atoms: int) -> np.ndarray:
    """W1-optimal M-atom uniform approximation of a target distribution.

    Reads the target quantile function at the midpoints (m - 0.5) / M.  The
    target is an AtomMixture or any callable mapping an array of levels in
    (0,1) to quantile values.
    """
    tau_hat = (np.arange(1, n_atoms + 1) - 0.5) / n_atoms
    if isinstance(target, AtomMixture):
        return np.asarray(target.inverse_cdf(tau_hat), dtype=np.float64)
    if callable(target):
        return np.asarray(target(tau_hat), dtype=np.float64)
    return np.asarray(_as_mixture(target).inverse_cdf(tau_hat), dtype=np.float64)


# ---------------------------------------------------------------------------
# Quantile Huber loss
# ---------------------------------------------------------------------------


def quantile_huber(tau, u, kappa_h: float):
    """Asymmetric Huber loss |tau - 1{u<0}| * L_kappa(u).

    L_kappa is u^2/2 inside [-kappa, kappa] and kappa*(|u| - kappa/2) outside.
    """
    if kappa_h <= 0:
        raise ValueError(f"kappa_h must be > 0, got {kappa_h}")
    tau = np.asarray(tau, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any(tau < 0) or np.any(tau > 1):
        raise ValueError("tau must lie in [0, 1]")
    abs_u = np.abs(u)
    huber = np.where(abs_u < kappa_h, 0.5 * u**2, kappa_h * (abs_u - 0.5 * kappa_h))
    out = np.abs(tau - (u < 0)) * huber
    return float(out) if out.ndim == 0 else out


def quantile_huber_grad(tau, u, kappa_h: float):
    """d/du of quantile_huber: |tau - 1{u<0}| * clip(u, -kappa, kappa)."""
    if kappa_h <= 0:
        raise ValueError(f"kappa_h must be > 0, got {kappa_h}")
    tau = np.asarray(tau, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    out = np.abs(tau - (u < 0)) * np.clip(u, -kappa_h, kappa_h)
    return float(out) if out.ndim == 0 else out
