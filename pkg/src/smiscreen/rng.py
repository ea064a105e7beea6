"""Deterministic per-entity random streams.

Every stochastic step in the pipeline draws from a numpy Generator keyed by
a stable hash of (seed, purpose, entity id). Python's builtin hash() is
salted per process, so streams are derived from SHA-256 instead; results are
identical across runs, machines, and thread counts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(*parts: object) -> int:
    """64-bit seed derived from the SHA-256 of the stringified parts."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*parts: object) -> np.random.Generator:
    """Independent Generator for the given (seed, purpose, entity) key."""
    return np.random.default_rng(stable_seed(*parts))
