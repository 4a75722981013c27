"""Momentum bookkeeping on the unit torus.

Momenta live on 2*pi*Z^3 with the zero mode excluded.  A lattice is stored
as integer triples (the 2*pi factor is applied on demand) so index maps are
exact; ordering is lexicographic on the triples, which makes basis
enumeration and CSV output reproducible across runs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractViolation

TWO_PI = 2.0 * np.pi

# Hard default on lattice size; a 5 GB box holds a few of these comfortably.
MAX_LATTICE_POINTS = 4_000_000


def bogoliubov_energy_sq(p_sq, a_v):
    """eps(p) from |p|^2: sqrt(p^4 + 16*pi*a_v*p^2).  Vectorized."""
    p_sq = np.asarray(p_sq, dtype=float)
    return np.sqrt(p_sq * p_sq + 16.0 * np.pi * a_v * p_sq)


def dispersion(p, a_v):
    """Phonon dispersion eps(p) = sqrt(p^4 + 16*pi*a_v*p^2) for a 3-vector p."""
    p = np.asarray(p, dtype=float)
    return float(bogoliubov_energy_sq(np.dot(p, p), a_v))


def form_factor_sq(p_sq, a_w, a_v, cutoff):
    """Coupling amplitude 8*pi*a_w*|p|*eps(p)^(-1/2) for |p| <= cutoff, else 0.

    Vectorized over an array of |p|^2 values; p = 0 entries are rejected.
    """
    p_sq = np.asarray(p_sq, dtype=float)
    if np.any(p_sq <= 0.0):
        raise ContractViolation("form factor is undefined at the zero mode")
    eps = bogoliubov_energy_sq(p_sq, a_v)
    out = 8.0 * np.pi * a_w * np.sqrt(p_sq) / np.sqrt(eps)
    return np.where(np.sqrt(p_sq) <= cutoff, out, 0.0)


def form_factor(p, a_w, a_v, cutoff):
    """Scalar form factor for a single 3-vector p (p must be nonzero)."""
    p = np.asarray(p, dtype=float)
    return float(form_factor_sq(np.dot(p, p), a_w, a_v, cutoff))


@dataclass(frozen=True)
class MomentumLattice:
    """Truncated set of nonzero momenta 2*pi*Z^3 with |p| <= cutoff_radius.

    Immutable after construction; safe to share between workers.
    """

    cutoff_radius: float
    ints: np.ndarray                     # (M, 3) integer triples, lex ordered
    index_of: dict = field(repr=False)   # tuple triple -> ordinal

    def __post_init__(self):
        self.ints.setflags(write=False)

    @property
    def size(self):
        return self.ints.shape[0]

    @property
    def points(self):
        """Momenta as floats, 2*pi times the integer triples."""
        return TWO_PI * self.ints.astype(float)

    @property
    def norm_sq(self):
        """|p|^2 for every lattice point."""
        s = (self.ints * self.ints).sum(axis=1)
        return (TWO_PI * TWO_PI) * s.astype(float)

    def index(self, triple):
        key = tuple(int(c) for c in triple)
        if key not in self.index_of:
            raise KeyError(f"momentum {key} not on lattice")
        return self.index_of[key]

    def negation_index(self):
        """Ordinal of -p for every p; the lattice is closed under negation."""
        return np.array([self.index_of[tuple((-v).tolist())] for v in self.ints])

    def restrict(self, radius):
        """Sublattice of points with |p| <= radius (ordering preserved)."""
        keep = self.norm_sq <= radius * radius + 1e-12
        return build_lattice(min(radius, self.cutoff_radius), _ints=self.ints[keep])


def build_lattice(cutoff_radius, max_points=MAX_LATTICE_POINTS, _ints=None):
    """All nonzero integer-triple momenta with |2*pi*n| <= cutoff_radius.

    Deterministically ordered (lexicographic on the triples).  Raises
    CapacityError if the ball holds more than max_points points.
    """
    if cutoff_radius <= 0:
        raise ContractViolation("cutoff_radius must be positive")
    if _ints is None:
        nmax = int(np.floor(cutoff_radius / TWO_PI + 1e-12))
        r_int_sq = (cutoff_radius / TWO_PI) ** 2 + 1e-12
        est = int(4.19 * (nmax + 1) ** 3) + 8
        if est > 8 * max_points:
            raise CapacityError(
                f"lattice ball with ~{est} candidate points exceeds the cap",
                requested=est, limit=max_points)
        rng = np.arange(-nmax, nmax + 1)
        grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1)
        grid = grid.reshape(-1, 3)
        s = (grid * grid).sum(axis=1)
        keep = (s > 0) & (s <= r_int_sq)
        ints = grid[keep]
        order = np.lexsort((ints[:, 2], ints[:, 1], ints[:, 0]))
        ints = np.ascontiguousarray(ints[order])
    else:
        ints = np.ascontiguousarray(_ints)
    if ints.shape[0] > max_points:
        raise CapacityError(
            f"lattice has {ints.shape[0]} points, cap is {max_points}",
            requested=ints.shape[0], limit=max_points)
    index_of = {tuple(v.tolist()): i for i, v in enumerate(ints)}
    return MomentumLattice(float(cutoff_radius), ints, index_of)


@dataclass
class ModelParams:
    """Physical and truncation parameters of one model instance.

    a_v, a_w are the boson-boson and boson-impurity scattering lengths,
    cutoff is the UV cutoff on the coupling, kappa the infrared threshold
    of the dressing profile, n_max the boson-number cap and p_total the
    conserved total momentum as an integer triple (units of 2*pi).
    """

    a_v: float = 0.0
    a_w: float = 0.0
    cutoff: float = TWO_PI
    kappa: float = 0.0
    n_max: int = 2
    p_total: tuple = (0, 0, 0)

    def __post_init__(self):
        if self.a_v < 0 or self.a_w < 0:
            raise ContractViolation("scattering lengths must be nonnegative")
        if self.cutoff <= 0:
            raise ContractViolation("cutoff must be positive")
        if self.kappa < 0:
            raise ContractViolation("kappa must be nonnegative")
        if self.n_max < 0:
            raise ContractViolation("n_max must be nonnegative")
        self.p_total = tuple(int(c) for c in self.p_total)

    @property
    def p_total_momentum(self):
        return TWO_PI * np.asarray(self.p_total, dtype=float)
