"""Counter-based seed derivation.

Every random stage draws from its own ``numpy.random.Generator`` whose seed is
derived from a root seed and a tuple of integer keys with the splitmix64
finalizer. Changing the number of curves or replications therefore never
reshuffles draws belonging to other curves or replications.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# stage tags keep streams for different purposes apart
STAGE_DESIGN = 1
STAGE_PATHS = 2
STAGE_NOISE = 3
STAGE_VOLUMES = 4
STAGE_REPLICATION = 5
STAGE_BAND = 6
STAGE_SUBSAMPLE = 7
STAGE_TRUTH = 8


def splitmix64(x):
    """One splitmix64 step on a 64-bit unsigned integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(root, *keys):
    """Fold ``keys`` into ``root`` one splitmix64 step at a time.

    ``derive_seed(root, i)`` is the seed of replication ``i``;
    ``derive_seed(root, STAGE_PATHS, i)`` the path stream of curve ``i``.
    """
    state = splitmix64(int(root) & _MASK)
    for k in keys:
        state = splitmix64(state ^ (int(k) & _MASK))
    return state


def generator(root, *keys):
    return np.random.Generator(np.random.PCG64(derive_seed(root, *keys)))
