"""Deterministic derivation of independent random streams.

Every source of randomness in the simulator is a named stream derived from a
root seed plus a purpose label and optional context fields (round index,
client id, ...). Labels are hashed with BLAKE2b, never Python's salted
``hash``, so streams replay identically across processes and platforms.
Derived streams are statistically independent, which lets client updates run
in any order (or in parallel) without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _token(value: int | str) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value) & _MASK64
    digest = hashlib.blake2b(str(value).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(root_seed: int, purpose: str, *fields: int | str) -> np.random.SeedSequence:
    entropy = [_token(root_seed), _token(purpose)]
    entropy.extend(_token(field) for field in fields)
    return np.random.SeedSequence(entropy)


def stream(root_seed: int, purpose: str, *fields: int | str) -> np.random.Generator:
    """Return a fresh generator keyed by (root_seed, purpose, *fields)."""
    return np.random.default_rng(seed_sequence(root_seed, purpose, *fields))
