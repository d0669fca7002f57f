"""Seeding helpers.

All randomness uses numpy's PCG64 bit generator. A single user seed is split
into independent named streams (``"synth"``, ``"init"``, ``"anneal"``, ...)
by mixing a CRC32 of the stream name into the ``SeedSequence`` entropy, so
each pipeline stage is reproducible on its own and across platforms.
"""
from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(seed: int, name: str = "") -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def make_rng(seed: int, name: str = "") -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, name)))
