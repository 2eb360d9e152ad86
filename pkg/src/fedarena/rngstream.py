"""Deterministic per-operation random streams.

Each stochastic operation draws from its own generator derived from the
experiment seed plus a tag, so reordering operations (or running them in
parallel) never changes what any single operation sees. Tags are hashed
with blake2b because Python's builtin hash() is salted per process.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *tags) -> int:
    """Collapse (seed, tags) to one stable integer seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(int(seed)).encode())
    for tag in tags:
        h.update(repr(tag).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def substream(seed: int, *tags) -> np.random.Generator:
    """Return a Generator keyed by (seed, tags), stable across processes."""
    return np.random.default_rng([int(seed), derive_seed(seed, *tags)])
