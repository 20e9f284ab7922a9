"""Per-draw random streams keyed by (master seed, purpose, index)."""
from __future__ import annotations

import numpy as np

HYPER = 1
POSTERIOR = 2
ROTATION = 3
NARRATIVE = 4
RESAMPLE = 5
FITTED = 6
FORECAST = 7
CONDITIONAL = 8


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Generator that depends only on its key, never on scheduling."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
