"""Seeded random streams.

All randomness in the package flows through `stream`, which derives an
independent PCG64 generator from a tuple of key parts (ints or short
strings).  Streams are keyed by what they are for -- e.g.
``stream(seed, "outer-folds", fold)`` -- so parallel execution order can
never perturb draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_ints(parts) -> list[int]:
    out = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            out.append(int(p) & 0xFFFFFFFFFFFFFFFF)
        else:
            out.append(zlib.crc32(str(p).encode("utf-8")))
    return out


def stream(*parts) -> np.random.Generator:
    """Independent generator deterministically derived from the key parts."""
    return np.random.default_rng(np.random.SeedSequence(_key_ints(parts)))


def derive_seed(*parts) -> int:
    """A plain integer seed derived from the key parts (for fit APIs)."""
    return int(np.random.SeedSequence(_key_ints(parts)).generate_state(1)[0])
