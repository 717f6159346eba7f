"""Deterministic RNG streams keyed by a hash of their role."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_key(*parts) -> int:
    """128-bit key from a tuple of labels (stable across runs and platforms)."""
    h = hashlib.blake2b(digest_size=16, person=b"rwsre-stream")
    h.update(repr(tuple(parts)).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def derive_stream(master_seed: int, scenario: str, n: int, replica: int) -> int:
    """Key of the stream for one (scenario, n, replica-block) cell."""
    return derive_key(int(master_seed), str(scenario), int(n), int(replica))


def generator(key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key))


def stream(*parts) -> np.random.Generator:
    return generator(derive_key(*parts))
