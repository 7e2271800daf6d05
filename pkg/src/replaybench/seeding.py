"""Seed derivation.

Every random draw in a run gets its own generator keyed by
(run seed, task index, step index, purpose). Adding a draw for one purpose
never shifts the stream seen by another.
"""
import zlib

import numpy as np


def _tag(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def derive_seed(run_seed, *keys):
    """Return an ``np.random.SeedSequence`` for the given key path.

    Keys may be non-negative ints or strings (strings are hashed with CRC32).
    """
    entropy = [int(run_seed)]
    for k in keys:
        entropy.append(_tag(k) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(entropy)


def make_rng(seed):
    """Accept an int, a SeedSequence, a tuple of ints or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, tuple):
        seed = derive_seed(*seed)
    return np.random.default_rng(seed)


def child_seed(seed, index):
    """Deterministic sub-seed ``(seed, index)`` for int or SeedSequence seeds."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, int(index)))
    if isinstance(seed, np.random.Generator):
        raise TypeError("child_seed needs an int or SeedSequence, not a Generator")
    if isinstance(seed, tuple):
        return derive_seed(*seed, int(index))
    return derive_seed(int(seed), int(index))
