"""Splitting one run seed into independent per-component streams.

``derive(seed, "train", "agent1")`` maps the pair (seed, path of names) to a
``numpy.random.SeedSequence`` whose spawn key is the CRC32 of each name.  A
component's stream depends only on the global seed and its own name path, so
adding another consumer (say, one more evaluation run) never shifts the draws
of an existing one.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive(seed: int, *names: str | int) -> np.random.SeedSequence:
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def rng(seed: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive(seed, *names))


def int_seed(seed: int, *names: str | int) -> int:
    """A plain 63-bit integer seed, for places that serialize seeds."""
    return int(derive(seed, *names).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
