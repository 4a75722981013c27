"""Occupation-number bases at fixed boson cap and fixed total momentum.

A sector state is a multiset of occupied lattice modes (at most n_max
bosons).  The impurity coordinate is eliminated: a state's impurity
momentum is implicitly p_total minus the total boson momentum, so the
impurity contributes only a diagonal kinetic term and the sector basis
is just the list of boson occupations.

States of a given boson count are ordered lexicographically by their
sorted mode-index tuples (itertools order), counts ascending, vacuum
first.  Index lookups use both a hash map (API) and a vectorized
combinatorial ranking (operator assembly).
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .errors import CapacityError, ContractViolation
from .lattice import MomentumLattice

MAX_SECTOR_STATES = 600_000


def sector_dimension(n_modes, n_max):
    """Stars-and-bars count: sum_j C(n_modes + j - 1, j) for j <= n_max."""
    return sum(comb(n_modes + j - 1, j) for j in range(n_max + 1))


@dataclass(frozen=True)
class SectorBasis:
    lattice: MomentumLattice
    n_max: int
    p_total: tuple
    blocks: tuple                      # blocks[j]: (dim_j, j) int32 mode indices
    offsets: np.ndarray                # block start ordinals, len n_max + 2
    boson_momentum: np.ndarray         # (dim, 3) integer triples, sum of modes
    index: dict = field(repr=False)    # sorted mode tuple -> ordinal

    @property
    def dim(self):
        return int(self.offsets[-1])

    def state_modes(self, ordinal):
        """Sorted mode-index tuple of one basis state."""
        j = int(np.searchsorted(self.offsets, ordinal, side="right")) - 1
        return tuple(int(x) for x in self.blocks[j][ordinal - self.offsets[j]])

    def occupations(self, ordinal):
        """Occupation multiset as {lattice-point triple: count}."""
        out = {}
        for m in self.state_modes(ordinal):
            key = tuple(int(c) for c in self.lattice.ints[m])
            out[key] = out.get(key, 0) + 1
        return out

    def impurity_momentum_int(self):
        """(dim, 3) integer triples p_total - sum(n_k k) for every state."""
        return np.asarray(self.p_total, dtype=np.int64) - self.boson_momentum


def enumerate_sector(lattice: MomentumLattice, n_max, p_total=(0, 0, 0),
                     max_states=MAX_SECTOR_STATES, impurity_ints=None):
    """Enumerate all occupation states with at most n_max bosons.

    impurity_ints optionally restricts states to those whose implicit
    impurity momentum lies in the given integer-triple set; this is the
    bookkeeping needed to compare sector spectra against a full
    tensor-product Hamiltonian with a truncated impurity lattice.
    """
    if n_max < 0:
        raise ContractViolation("n_max must be nonnegative")
    M = lattice.size
    would_be = sector_dimension(M, n_max)
    if impurity_ints is None and would_be > max_states:
        raise CapacityError(
            f"sector would hold {would_be} states (cap {max_states})",
            requested=would_be, limit=max_states)
    p_total = tuple(int(c) for c in p_total)

    allowed = None
    if impurity_ints is not None:
        allowed = {tuple(int(c) for c in v) for v in np.asarray(impurity_ints)}

    blocks = []
    momenta = []
    for j in range(n_max + 1):
        if j == 0:
            states = np.zeros((1, 0), dtype=np.int32)
        else:
            states = np.fromiter(
                (m for combo in combinations_with_replacement(range(M), j)
                 for m in combo),
                dtype=np.int32).reshape(-1, j)
        if j == 0:
            K = np.zeros((1, 3), dtype=np.int64)
        else:
            K = lattice.ints[states].sum(axis=1).astype(np.int64)
        if allowed is not None:
            imp = np.asarray(p_total, dtype=np.int64) - K
            keep = np.fromiter((tuple(v) in allowed for v in imp), dtype=bool,
                               count=imp.shape[0])
            states, K = states[keep], K[keep]
        blocks.append(np.ascontiguousarray(states))
        momenta.append(K)

    offsets = np.concatenate(([0], np.cumsum([b.shape[0] for b in blocks])))
    dim = int(offsets[-1])
    if dim > max_states:
        raise CapacityError(f"sector holds {dim} states (cap {max_states})",
                            requested=dim, limit=max_states)
    index = {}
    for j, b in enumerate(blocks):
        base = int(offsets[j])
        for i, row in enumerate(b):
            index[tuple(int(x) for x in row)] = base + i
    return SectorBasis(lattice, int(n_max), p_total, tuple(blocks), offsets,
                       np.concatenate(momenta, axis=0), index)


def state_index(basis: SectorBasis, state):
    """Ordinal of an occupation state.

    Accepts a dict {lattice-point triple: count} or an iterable of mode
    ordinals.  Unknown states raise KeyError.
    """
    if isinstance(state, dict):
        modes = []
        for triple, count in state.items():
            if count < 0:
                raise ContractViolation("occupation counts must be nonnegative")
            m = basis.lattice.index(triple)   # KeyError for off-lattice modes
            modes.extend([m] * int(count))
    else:
        modes = [int(m) for m in state]
        for m in modes:
            if not 0 <= m < basis.lattice.size:
                raise KeyError(f"mode ordinal {m} outside the lattice")
    key = tuple(sorted(modes))
    if len(key) > basis.n_max:
        raise KeyError(f"state holds {len(key)} bosons, cap is {basis.n_max}")
    if key not in basis.index:
        raise KeyError(f"state {key} not present in this sector")
    return basis.index[key]


# ---------------------------------------------------------------------------
# vectorized ranking (used by operator assembly; no hash lookups)

def _binomial_table(n, k):
    C = np.zeros((n + 1, k + 1), dtype=np.int64)
    C[:, 0] = 1
    for i in range(1, n + 1):
        top = min(i, k)
        C[i, 1:top + 1] = C[i - 1, :top] + C[i - 1, 1:top + 1]
        if i <= k:
            C[i, i + 1:] = 0
    return C


def rank_multisets(rows, n_modes):
    """Lexicographic ranks of sorted multiset rows within their count block.

    rows: (B, j) array of ascending mode indices; returns (B,) int64 ranks
    consistent with itertools.combinations_with_replacement ordering.
    """
    rows = np.asarray(rows)
    B, j = rows.shape
    if j == 0:
        return np.zeros(B, dtype=np.int64)
    n = n_modes + j - 1
    C = _binomial_table(n + 1, j + 1)
    c = rows + np.arange(j, dtype=rows.dtype)      # strictly increasing combos
    prev = np.concatenate([np.full((B, 1), -1, dtype=c.dtype), c[:, :-1]], axis=1)
    k_minus_i = j - np.arange(j)
    rank = np.zeros(B, dtype=np.int64)
    for t in range(j):
        m = int(k_minus_i[t])
        rank += C[n - 1 - prev[:, t], m] - C[n - c[:, t], m]
    return rank
