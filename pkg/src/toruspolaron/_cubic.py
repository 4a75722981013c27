"""Cubic-lattice symmetry reduction for radial double sums.

Every summand used here is invariant under the 48 signed permutations of
the coordinate axes, so a double sum over a ball can run over orbit
representatives on one side, weighted by orbit size.  Partial sums are
accumulated per chunk and reduced with math.fsum in a fixed order, so
results do not depend on chunking or worker scheduling.
"""

import math

import numpy as np


def orbit_representatives(ints):
    """Orbit reps (0 <= x <= y <= z) and orbit sizes covering the given points.

    ints: (M, 3) integer array closed under signed permutations.
    Returns (reps, weights) with sum(weights) == M.
    """
    a = np.sort(np.abs(np.asarray(ints, dtype=np.int64)), axis=1)
    reps, counts = np.unique(a, axis=0, return_counts=True)
    x, y, z = reps[:, 0], reps[:, 1], reps[:, 2]
    perms = np.where((x == y) & (y == z), 1, np.where((x == y) | (y == z), 3, 6))
    signs = 2 ** ((reps != 0).sum(axis=1))
    weights = perms * signs
    if int(weights.sum()) != ints.shape[0]:
        raise AssertionError("orbit decomposition does not cover the point set")
    # counts must equal weights when the input is a full ball; tolerate
    # subsets that are merely union-of-orbits.
    del counts
    return reps, weights.astype(float)


def fsum_chunks(partials):
    """Deterministic reduction of per-chunk partial sums."""
    return math.fsum(partials)
