"""Finite MDPs, reward distributions, policies, and offline datasets.

States and actions are integer ids.  Reward distributions are small tagged
variants (point-mass mixtures and two continuous families) with exact CDF,
PDF and sampling support, so that downstream operators can integrate against
them in closed form instead of by simulation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as _sps

PROB_ATOL = 1e-12


class MdpValidationError(ValueError):
    """A structural invariant of an MDP, policy, or dataset is violated."""


class MissingDataError(LookupError):
    """No dataset tuples exist for a queried state-action pair."""


# ---------------------------------------------------------------------------
# Reward distributions
# ---------------------------------------------------------------------------


@dataclass
class PointMassMixture:
    """Finite mixture of point masses: values with matching probabilities."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.values.size == 0 or self.values.size != self.weights.size:
            raise MdpValidationError("values and weights must be nonempty and same length")
        if not np.all(np.isfinite(self.values)):
            raise MdpValidationError("point-mass values must be finite")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > PROB_ATOL:
            raise MdpValidationError(
                f"weights must be nonnegative and sum to 1 (got sum={self.weights.sum()!r})"
            )
        order = np.argsort(self.values, kind="stable")
        self.values = self.values[order]
        self.weights = self.weights[order]
        self._cum = np.cumsum(self.weights)
        self._cum[-1] = 1.0

    is_continuous = False

    def support(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def cdf(self, x):
        idx = np.searchsorted(self.values, np.asarray(x, dtype=np.float64), side="right")
        padded = np.concatenate(([0.0], self._cum))
        return padded[idx]

    def pdf(self, x):
        raise MdpValidationError("point-mass distribution has no density")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        idx = rng.choice(self.values.size, size=size, p=self.weights)
        return self.values[idx]

    def spec_key(self) -> str:
        vals = ",".join(f"{v:.17g}" for v in self.values)
        wts = ",".join(f"{w:.17g}" for w in self.weights)
        return f"pmm[{vals}|{wts}]"


def point_mass(value: float) -> PointMassMixture:
    """Degenerate reward distribution concentrated at ``value``."""
    return PointMassMixture(np.array([value]), np.array([1.0]))


@dataclass
class Uniform:
    """Uniform reward on [lo, hi]; strictly positive density on its support."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise MdpValidationError(f"need finite lo < hi (got {self.lo}, {self.hi})")

    is_continuous = True

    def support(self) -> tuple[float, float]:
        return float(self.lo), float(self.hi)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return rng.uniform(self.lo, self.hi, size=size)

    def spec_key(self) -> str:
        return f"unif[{self.lo:.17g},{self.hi:.17g}]"


@dataclass
class TruncatedGaussian:
    """Gaussian restricted to [lo, hi] and renormalized."""

    mean_: float
    std: float
    lo: float
    hi: float

    def __post_init__(self):
        if self.std <= 0:
            raise MdpValidationError("std must be > 0")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise MdpValidationError(f"need finite lo < hi (got {self.lo}, {self.hi})")
        a = (self.lo - self.mean_) / self.std
        b = (self.hi - self.mean_) / self.std
        self._dist = _sps.truncnorm(a, b, loc=self.mean_, scale=self.std)

    is_continuous = True

    def support(self) -> tuple[float, float]:
        return float(self.lo), float(self.hi)

    def mean(self) -> float:
        return float(self._dist.mean())

    def cdf(self, x):
        return self._dist.cdf(np.asarray(x, dtype=np.float64))

    def pdf(self, x):
        return self._dist.pdf(np.asarray(x, dtype=np.float64))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return self._dist.rvs(size=() if size is None else size, random_state=rng)

    def spec_key(self) -> str:
        return f"tgauss[{self.mean_:.17g},{self.std:.17g},{self.lo:.17g},{self.hi:.17g}]"


RewardDist = PointMassMixture | Uniform | TruncatedGaussian


# ---------------------------------------------------------------------------
# MDP and policy
# ---------------------------------------------------------------------------


@dataclass
class FiniteMdp:
    """Finite MDP: transition kernel P(s'|s,a), per-(s,a) reward distribution,
    discount gamma in (0,1) and initial state distribution rho0.

    Immutable after construction by convention; safe to share across workers.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S)
    rewards: list  # rewards[s][a] -> RewardDist
    gamma: float
    rho0: np.ndarray

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)

    def reward(self, s: int, a: int) -> RewardDist:
        return self.rewards[s][a]

    def reward_support_bounds(self) -> tuple[float, float]:
        los, his = zip(
            *(self.rewards[s][a].support() for s in range(self.n_states) for a in range(self.n_actions))
        )
        return min(los), max(his)

    def return_range(self) -> tuple[float, float]:
        """Exact bounds on the discounted return: [r_lo, r_hi] / (1 - gamma)."""
        r_lo, r_hi = self.reward_support_bounds()
        return r_lo / (1.0 - self.gamma), r_hi / (1.0 - self.gamma)

    def mean_rewards(self) -> np.ndarray:
        out = np.empty((self.n_states, self.n_actions))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                out[s, a] = self.rewards[s][a].mean()
        return out

    def all_point_mass(self) -> bool:
        return all(
            isinstance(self.rewards[s][a], PointMassMixture)
            for s in range(self.n_states)
            for a in range(self.n_actions)
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.transition).tobytes())
        h.update(np.ascontiguousarray(self.rho0).tobytes())
        h.update(f"{self.gamma:.17g}".encode())
        for s in range(self.n_states):
            for a in range(self.n_actions):
                h.update(self.rewards[s][a].spec_key().encode())
        return h.hexdigest()


def validate_mdp(mdp: FiniteMdp) -> None:
    """Raise MdpValidationError naming the first violated invariant."""
    S, A = mdp.n_states, mdp.n_actions
    if mdp.transition.shape != (S, A, S):
        raise MdpValidationError(
            f"transition shape {mdp.transition.shape} != {(S, A, S)}"
        )
    if np.any(mdp.transition < 0):
        s, a, s2 = np.unravel_index(int(np.argmin(mdp.transition)), mdp.transition.shape)
        raise MdpValidationError(f"negative transition probability at (s={s}, a={a}, s'={s2})")
    row_sums = mdp.transition.sum(axis=-1)
    dev = np.abs(row_sums - 1.0)
    if np.any(dev > PROB_ATOL):
        s, a = np.unravel_index(int(np.argmax(dev)), dev.shape)
        raise MdpValidationError(
            f"transition row not stochastic at (s={s}, a={a}): sum={row_sums[s, a]!r}, "
            f"deviation={dev[s, a]:.3g}"
        )
    if not (0.0 < mdp.gamma < 1.0):
        raise MdpValidationError(f"gamma out of range (0,1): {mdp.gamma}")
    if mdp.rho0.shape != (S,):
        raise MdpValidationError(f"rho0 shape {mdp.rho0.shape} != ({S},)")
    if np.any(mdp.rho0 < 0) or abs(mdp.rho0.sum() - 1.0) > PROB_ATOL:
        raise MdpValidationError(
            f"rho0 not a distribution: sum={mdp.rho0.sum()!r}, min={mdp.rho0.min()!r}"
        )
    if len(mdp.rewards) != S or any(len(row) != A for row in mdp.rewards):
        raise MdpValidationError("rewards table shape mismatch")
    for s in range(S):
        for a in range(A):
            lo, hi = mdp.rewards[s][a].support()
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise MdpValidationError(f"unbounded reward support at (s={s}, a={a})")


@dataclass
class Policy:
    """Stochastic policy pi(a|s) as a row-stochastic (S, A) table."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise MdpValidationError("policy table must be 2-D (states x actions)")
        if np.any(self.probs < 0):
            raise MdpValidationError("policy probabilities must be nonnegative")
        dev = np.abs(self.probs.sum(axis=1) - 1.0)
        if np.any(dev > PROB_ATOL):
            s = int(np.argmax(dev))
            raise MdpValidationError(
                f"policy row {s} not stochastic: sum={self.probs[s].sum()!r}"
            )

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


def uniform_policy(n_states: int, n_actions: int) -> Policy:
    return Policy(np.full((n_states, n_actions), 1.0 / n_actions))


def deterministic_policy(actions: np.ndarray, n_actions: int) -> Policy:
    probs = np.zeros((len(actions), n_actions))
    probs[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
    return Policy(probs)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _check_indices(mdp: FiniteMdp, s: int, a: int) -> None:
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"state-action ({s}, {a}) out of range "
                         f"({mdp.n_states} states, {mdp.n_actions} actions)")


def sample_step(mdp: FiniteMdp, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
    """Draw (r, s') from R(s,a) and P(.|s,a).  Reward is drawn first."""
    _check_indices(mdp, s, a)
    r = float(mdp.rewards[s][a].sample(rng))
    s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
    return r, s_next


# ---------------------------------------------------------------------------
# Offline datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IidFromWeights:
    """Draw (s,a) pairs i.i.d. from a weight table over S x A."""

    weights: np.ndarray


@dataclass(frozen=True)
class Trajectories:
    """Roll fixed-horizon trajectories from rho0 under the behavior policy."""

    horizon: int


@dataclass
class OfflineDataset:
    """Batch of (s, a, r, s') tuples with derived counts and per-pair index."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    n_states: int
    n_actions: int
    counts: np.ndarray = field(init=False)
    index: dict = field(init=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        n = self.s.size
        if not (self.a.size == self.r.size == self.s_next.size == n):
            raise MdpValidationError("dataset column lengths differ")
        pair = self.s * self.n_actions + self.a
        self.counts = np.bincount(pair, minlength=self.n_states * self.n_actions).reshape(
            self.n_states, self.n_actions
        )
        order = np.argsort(pair, kind="stable")
        self.index = {}
        start = 0
        sorted_pair = pair[order]
        while start < n:
            stop = int(np.searchsorted(sorted_pair, sorted_pair[start], side="right"))
            rows = order[start:stop]
            key = (int(self.s[rows[0]]), int(self.a[rows[0]]))
            self.index[key] = (self.r[rows], self.s_next[rows])
            start = stop

    def __len__(self) -> int:
        return self.s.size

    def pair_data(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.index[(s, a)]
        except KeyError:
            raise MissingDataError(f"no data for pair (s={s}, a={a})") from None


def generate_offline_dataset(
    mdp: FiniteMdp,
    behavior: Policy,
    n: int,
    scheme: IidFromWeights | Trajectories,
    rng: np.random.Generator,
) -> OfflineDataset:
    """Generate an offline batch of n transition tuples.

    Under IidFromWeights, (s,a) pairs are i.i.d. from the weight table and
    (r, s') from the MDP.  Under Trajectories, fixed-horizon episodes are
    rolled from rho0 under ``behavior`` until n tuples accumulate.
    """
    if n < 1:
        raise MdpValidationError("dataset size must be >= 1")
    S, A = mdp.n_states, mdp.n_actions
    if isinstance(scheme, IidFromWeights):
        w = np.asarray(scheme.weights, dtype=np.float64)
        if w.shape != (S, A):
            raise MdpValidationError(f"weights shape {w.shape} != {(S, A)}")
        if np.any(w < 0) or w.sum() <= 0:
            raise MdpValidationError("weights must be nonnegative with positive total mass")
        flat_w = (w / w.sum()).ravel()
        pair = rng.choice(S * A, size=n, p=flat_w)
        s = pair // A
        a = pair % A
        r = np.empty(n)
        s_next = np.empty(n, dtype=np.int64)
        for pidx in np.unique(pair):
            rows = np.flatnonzero(pair == pidx)
            si, ai = int(pidx // A), int(pidx % A)
            r[rows] = mdp.rewards[si][ai].sample(rng, size=rows.size)
            s_next[rows] = rng.choice(S, size=rows.size, p=mdp.transition[si, ai])
        return OfflineDataset(s, a, r, s_next, S, A)
    if isinstance(scheme, Trajectories):
        if scheme.horizon < 1:
            raise MdpValidationError("trajectory horizon must be >= 1")
        ss, aa, rr, nn = [], [], [], []
        while len(ss) < n:
            s = int(rng.choice(S, p=mdp.rho0))
            for _ in range(scheme.horizon):
                a = int(rng.choice(A, p=behavior.probs[s]))
                r, s2 = sample_step(mdp, s, a, rng)
                ss.append(s); aa.append(a); rr.append(r); nn.append(s2)
                s = s2
                if len(ss) >= n:
                    break
        return OfflineDataset(np.array(ss), np.array(aa), np.array(rr), np.array(nn), S, A)
    raise TypeError(f"unknown dataset scheme: {scheme!r}")


# ---------------------------------------------------------------------------
# Monte-Carlo return oracle
# ---------------------------------------------------------------------------


def truncation_horizon(mdp: FiniteMdp, max_bias: float) -> int:
    """Smallest horizon H with gamma^H * max|r| / (1-gamma) <= max_bias."""
    r_lo, r_hi = mdp.reward_support_bounds()
    r_abs = max(abs(r_lo), abs(r_hi))
    if r_abs == 0.0:
        return 1
    h = np.log(max_bias * (1.0 - mdp.gamma) / r_abs) / np.log(mdp.gamma)
    return max(1, int(np.ceil(h)))


def _sample_rewards_grouped(mdp, s, a, rng):
    """Vectorized reward draw for parallel rollouts grouped by (s,a)."""
    r = np.empty(s.size)
    pair = s * mdp.n_actions + a
    for pidx in np.unique(pair):
        rows = np.flatnonzero(pair == pidx)
        si, ai = int(pidx // mdp.n_actions), int(pidx % mdp.n_actions)
        r[rows] = mdp.rewards[si][ai].sample(rng, size=rows.size)
    return r


def _sample_next_states_grouped(mdp, s, a, rng):
    s_next = np.empty(s.size, dtype=np.int64)
    pair = s * mdp.n_actions + a
    for pidx in np.unique(pair):
        rows = np.flatnonzero(pair == pidx)
        si, ai = int(pidx // mdp.n_actions), int(pidx % mdp.n_actions)
        s_next[rows] = rng.choice(mdp.n_states, size=rows.size, p=mdp.transition[si, ai])
    return s_next


def _sample_actions_grouped(policy: Policy, s, rng):
    a = np.empty(s.size, dtype=np.int64)
    for si in np.unique(s):
        rows = np.flatnonzero(s == si)
        a[rows] = rng.choice(policy.n_actions, size=rows.size, p=policy.probs[si])
    return a


def monte_carlo_returns(
    mdp: FiniteMdp,
    pi: Policy,
    s: int,
    a: int,
    horizon: int,
    n_rollouts: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Truncated-return samples Z = sum_{t<horizon} gamma^t r_t from (s,a) under pi.

    All rollouts are advanced in parallel; truncation bias is bounded by
    gamma^horizon * max|r| / (1-gamma).
    """
    _check_indices(mdp, s, a)
    states = np.full(n_rollouts, s, dtype=np.int64)
    actions = np.full(n_rollouts, a, dtype=np.int64)
    returns = np.zeros(n_rollouts)
    disc = 1.0
    for _ in range(horizon):
        returns += disc * _sample_rewards_grouped(mdp, states, actions, rng)
        states = _sample_next_states_grouped(mdp, states, actions, rng)
        actions = _sample_actions_grouped(pi, states, rng)
        disc *= mdp.gamma
    return returns


# ---------------------------------------------------------------------------
# Dataset serialization
# ---------------------------------------------------------------------------


def save_dataset(ds: OfflineDataset, path: str | Path, seed: int, mdp_hash: str) -> None:
    """Write the flat text format: two header lines then CSV rows s,a,r,s_next."""
    lines = [f"# seed={seed}", f"# mdp_hash={mdp_hash}"]
    for i in range(len(ds)):
        lines.append(f"{ds.s[i]},{ds.a[i]},{ds.r[i]:.17g},{ds.s_next[i]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(
    path: str | Path, n_states: int | None = None, n_actions: int | None = None
) -> tuple[OfflineDataset, dict]:
    """Read a dataset file; returns the dataset and header metadata."""
    meta = {}
    s, a, r, s_next = [], [], [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line.lstrip("# ").partition("=")
            meta[key.strip()] = val.strip()
            continue
        f0, f1, f2, f3 = line.split(",")
        s.append(int(f0)); a.append(int(f1)); r.append(float(f2)); s_next.append(int(f3))
    s = np.array(s, dtype=np.int64)
    a = np.array(a, dtype=np.int64)
    n_states = n_states if n_states is not None else int(max(s.max(), max(s_next))) + 1
    n_actions = n_actions if n_actions is not None else int(a.max()) + 1
    ds = OfflineDataset(s, a, np.array(r), np.array(s_next, dtype=np.int64), n_states, n_actions)
    return ds, meta
