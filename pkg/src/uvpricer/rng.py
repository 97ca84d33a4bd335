"""Counter-based Gaussian increments with per-(path, step) addressing.

A Philox-4x64 keyed with the seed produces four 64-bit words per counter
value.  One counter value is dedicated to each ``(path, step)`` pair — block
index ``path * n_steps + step`` — and the first two words of the block become
the two standard normals for that step.  Consequences:

* the draw for a given ``(seed, path, step)`` never depends on how many paths
  are requested or how the batch is chunked, and
* disjoint path ranges can be generated independently (in parallel or
  lazily) and concatenated without overlap.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4
_INV_2_53 = 2.0**-53


def normal_increments(
    seed: int, n_paths: int, n_steps: int, first_path: int = 0
) -> np.ndarray:
    """Standard normal pairs for paths ``first_path .. first_path+n_paths-1``.

    Returns an array of shape ``(n_paths, n_steps, 2)``.  Calling with
    ``first_path=k`` reproduces rows ``k:`` of a larger call with
    ``first_path=0`` and the same ``(seed, n_steps)``.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError(
            f"need n_paths >= 1 and n_steps >= 1, got {n_paths}, {n_steps}"
        )
    if first_path < 0:
        raise ValueError(f"first_path must be non-negative, got {first_path}")
    bitgen = Philox(key=seed, counter=first_path * n_steps)
    raw = bitgen.random_raw(n_paths * n_steps * _WORDS_PER_BLOCK)
    raw = raw.reshape(n_paths, n_steps, _WORDS_PER_BLOCK)[:, :, :2]
    # Top 53 bits -> uniform on (0, 1), strictly inside so ndtri stays finite.
    uniforms = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
    return ndtri(uniforms)


def chunk_ranges(n_paths: int, chunk_size: int):
    """Yield ``(first_path, count)`` pairs covering ``range(n_paths)``."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    start = 0
    while start < n_paths:
        count = min(chunk_size, n_paths - start)
        yield start, count
        start += count
