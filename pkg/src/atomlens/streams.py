"""Counter-based random streams: particle i's draws depend only on (seed, i).

Each particle owns two Philox blocks (eight 64-bit words) at counter 2*i, so
sampling a slice of particles, or one particle alone, yields exactly the
values that a full in-order draw would. Normals come from the inverse normal
CDF, which keeps the word-to-value mapping fixed.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

WORDS_PER_PARTICLE = 8
_BLOCKS_PER_PARTICLE = 2


def uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """(count, 8) open-interval uniforms for particles ``start .. start+count-1``."""
    bitgen = np.random.Philox(key=seed, counter=_BLOCKS_PER_PARTICLE * start)
    raw = bitgen.random_raw(WORDS_PER_PARTICLE * count).reshape(count, WORDS_PER_PARTICLE)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, start: int, count: int, width: int = 6) -> np.ndarray:
    """(count, width) standard normals, ``width <= 8``."""
    if not 0 < width <= WORDS_PER_PARTICLE:
        raise ValueError(f"width must be in 1..{WORDS_PER_PARTICLE}")
    return ndtri(uniforms(seed, start, count)[:, :width])
