"""Deterministic random streams.

All randomness in the package is drawn from numpy's Philox (a 64-bit
counter-based generator) keyed through a SeedSequence, so streams are
reproducible across platforms and independent of dispatch order.
"""

import hashlib

import numpy as np


def make_rng(*key: int) -> np.random.Generator:
    """Return a Philox generator keyed by one or more non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def derive_seed(*parts: str | int) -> int:
    """Hash an identity tuple (e.g. global seed, speaker, attack, L, K) to a 63-bit seed."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
