"""Counter-based seed splitting.

A root seed plus a tuple of integer keys identifies an independent stream,
so stream ``(root, b)`` does not depend on how many siblings exist.
"""
import secrets

import numpy as np


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def child_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def fresh_seed() -> int:
    return secrets.randbits(63)
