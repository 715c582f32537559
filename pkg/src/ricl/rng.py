"""Deterministic random streams derived from a single 64-bit seed.

Every seeded stage (shot selection, bootstrap resampling, judge-order
randomization, task shuffling) derives its own independent stream from the
run seed plus a string label, so adding or reordering stages never shifts
the draws of another stage.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def validate_seed(seed: int) -> int:
    """Check that ``seed`` fits in an unsigned 64-bit integer."""
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise TypeError(f"seed must be an int, got {type(seed).__name__}")
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def derive_seed(seed: int, *labels: str) -> int:
    """Derive a child seed from ``seed`` and a sequence of string labels.

    Hash-based, so the result is stable across platforms and Python
    versions. Equal (seed, labels) always map to the same child seed.
    """
    validate_seed(seed)
    h = hashlib.blake2b(digest_size=8)
    h.update(seed.to_bytes(8, "little"))
    for label in labels:
        encoded = label.encode("utf-8")
        h.update(len(encoded).to_bytes(4, "little"))
        h.update(encoded)
    return int.from_bytes(h.digest(), "little")


def generator(seed: int, *labels: str) -> np.random.Generator:
    """A numpy Generator seeded by ``derive_seed(seed, *labels)``."""
    return np.random.default_rng(derive_seed(seed, *labels))
