"""Seed derivation for reproducible, parallel-safe Monte-Carlo.

Every random stream in the package is a Philox (counter-based) generator keyed
by ``SeedSequence(entropy=seed, spawn_key=(tag, index))``.  A path's draws are
therefore a pure function of ``(seed, tag, index)`` and never depend on how
paths are grouped into chunks or threads.
"""

from __future__ import annotations

import numpy as np

# stream tags
PRICE_PATH = 0
FILLS = 1
PRICING = 2
PRICING_INNER = 3


def substream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def path_normals(seed: int, tag: int, indices, n_steps: int) -> np.ndarray:
    """Standard normals of shape ``(n_steps, len(indices))``, one column per path."""
    out = np.empty((n_steps, len(indices)))
    for col, i in enumerate(indices):
        out[:, col] = substream(seed, tag, i).standard_normal(n_steps)
    return out
