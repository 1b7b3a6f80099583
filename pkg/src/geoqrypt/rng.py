"""Seeded random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``.  Named
substreams keep modules independent: drawing more numbers in one module never
shifts the numbers another module sees.
"""

from __future__ import annotations

import numpy as np

# Stable ids; never renumber, only append.
STREAMS = {
    "quantum": 1,
    "qdc": 2,
    "channel": 3,
    "localization": 4,
    "qlv": 5,
    "orchestrator": 6,
    "cli": 7,
}

_MASK64 = (1 << 64) - 1


def substream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Generator for stream ``name`` keyed by ``seed`` and optional counters.

    Counters give counter-based sub-substreams (per chunk, per trial), so a
    result never depends on evaluation order.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}")
    entropy = [int(seed) & _MASK64, STREAMS[name], *(int(c) for c in counters)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
