"""Named deterministic random streams.

All randomness in a run flows from one integer seed. Each consumer asks
for a named stream (init, ia, fa, dropout, batch-shuffle, ...) so that
adding draws to one stage never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Return a generator for stream `name` derived from the run seed."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def step_rng(seed: int, name: str, step: int) -> np.random.Generator:
    """Per-step stream, stable no matter how many draws other steps made."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, tag, step]))
    )
