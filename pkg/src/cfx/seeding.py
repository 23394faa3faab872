"""Seed fan-out: one user seed, independent streams per subsystem."""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, label: str) -> int:
    # label hash is fixed (blake2b), so derivation is stable across processes
    tag = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
    _, out = splitmix64((seed & MASK64) ^ tag)
    return out


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
