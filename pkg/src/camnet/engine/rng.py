"""Named, seeded random streams so each consumer replays independently."""

import zlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for consumer ``name`` (e.g. "init", "shuffle", "augment")."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
