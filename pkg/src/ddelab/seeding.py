"""Deterministic rng derivation: every stream is seeded by the single run
seed XOR a fixed role constant, so reruns are bit-reproducible and roles
never share a stream."""
from __future__ import annotations

import numpy as np

# role constants (arbitrary fixed odd integers, documented in the README)
ROLE_CONSTANTS = {
    "mdp": 0x3D90A7,
    "dataset": 0xD47A5E7,
    "init": 0x1A17B3,
    "train": 0x7EA149,
    "eval": 0xE7A10D,
    "theory": 0x7E0EE5,
}


def rng_for(seed: int, role: str) -> np.random.Generator:
    """Generator for a named role derived from the run seed."""
    return np.random.default_rng(int(seed) ^ ROLE_CONSTANTS[role])
