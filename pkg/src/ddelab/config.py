"""Flat key = value experiment configuration with section headers.

Every key is globally unique, so command-line overrides can be given as bare
``key=value`` pairs.  An empty file (or no file) yields all defaults; unknown
keys are rejected by name.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration file or override."""


@dataclass
class Config:
    # [mdp]
    kind: str = "skewed_chain"  # skewed_chain | gridworld | random | reference
    n_states: int = 10
    n_actions: int = 2
    gamma: float = 0.9
    mdp_seed: int = 0
    grid_width: int = 4
    grid_height: int = 3
    cliff: bool = True
    safe_low: float = 0.8
    safe_high: float = 1.0
    risky_base: float = 1.2
    tail_value: float = -8.0
    tail_prob: float = 0.05
    # [dataset]
    n_samples: int = 2000
    scheme: str = "iid"  # iid | trajectories
    traj_horizon: int = 50
    skew: float = 0.9
    # [algo]
    L: int = 10
    M: int = 32
    beta: float = 0.5
    learning_rate: float = 0.1
    kappa_huber: float = 1.0
    kappa_polyak: float = 0.005
    epsilon: float = 0.1
    steps: int = 2000
    batch_size: int = 128
    eval_every: int = 200
    init: str = "uniform_random"  # uniform_random | constant
    init_lo: float = 0.0
    init_hi: float = 1.0
    init_constant: float = 0.0
    policy_mode: str = "mean"  # mean | cvar
    cvar_alpha: float = 0.25
    penalty_shape: str = "per_tau"  # per_tau | uniform
    enumerate_actions: bool = False
    bootstrap: bool = False
    # [eval]
    eval_episodes: int = 2000
    eval_horizon: int = 100
    eval_phi: str = "none"  # none | constant
    eval_phi_constant: float = 0.0
    eval_policy: str = "uniform"  # uniform | behavior
    fp_tol: float = 1e-9
    # [theory]
    clt_n: int = 4096
    clt_replicates: int = 5000
    conc_n: int = 4096
    conc_replicates: int = 1000
    delta: float = 0.1
    taus: str = "0.1,0.5,0.9"
    sandwich_instances: int = 20
    sandwich_m: int = 128
    sandwich_tol: float = 1e-6
    theory_m: int = 32
    # [compare]
    n_seeds: int = 10

    def tau_list(self) -> list[float]:
        return [float(t) for t in self.taus.split(",") if t.strip()]


SECTIONS = {
    "mdp": [
        "kind", "n_states", "n_actions", "gamma", "mdp_seed", "grid_width",
        "grid_height", "cliff", "safe_low", "safe_high", "risky_base",
        "tail_value", "tail_prob",
    ],
    "dataset": ["n_samples", "scheme", "traj_horizon", "skew"],
    "algo": [
        "L", "M", "beta", "learning_rate", "kappa_huber", "kappa_polyak",
        "epsilon", "steps", "batch_size", "eval_every", "init", "init_lo",
        "init_hi", "init_constant", "policy_mode", "cvar_alpha",
        "penalty_shape", "enumerate_actions", "bootstrap",
    ],
    "eval": [
        "eval_episodes", "eval_horizon", "eval_phi", "eval_phi_constant",
        "eval_policy", "fp_tol",
    ],
    "theory": [
        "clt_n", "clt_replicates", "conc_n", "conc_replicates", "delta",
        "taus", "sandwich_instances", "sandwich_m", "sandwich_tol", "theory_m",
    ],
    "compare": ["n_seeds"],
}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}
_ALL_KEYS = {key for keys in SECTIONS.values() for key in keys}


def _parse_value(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    if typ == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean for key '{key}': {raw!r}")
    if typ == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"cannot parse integer for key '{key}': {raw!r}") from None
    if typ == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"cannot parse float for key '{key}': {raw!r}") from None
    return raw


def load_config(path: str | Path | None) -> Config:
    """Load a config file; missing path or empty file yields all defaults."""
    cfg = Config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section '[{section}]'")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key '{key}' in section '[{section}]'")
            setattr(cfg, key, _parse_value(key, raw))
    return cfg


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply bare key=value overrides (keys are globally unique)."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override must look like key=value: {item!r}")
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key '{key}'")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def config_hash(cfg: Config) -> str:
    """Stable short hash of the canonical key=value serialization."""
    lines = [f"{name}={getattr(cfg, name)!r}" for name in sorted(_ALL_KEYS)]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]


def dump_config(cfg: Config) -> str:
    """Canonical text form, one section per block."""
    blocks = []
    for section, keys in SECTIONS.items():
        lines = [f"[{section}]"] + [f"{key} = {getattr(cfg, key)}" for key in keys]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
