"""Dressing profile and renormalization counterterms.

The linear counterterm is a single lattice sum over the dressing window,
the quadratic one a double sum over mode pairs; the latter is reduced by
the 48 cubic symmetries and accumulated chunkwise with a deterministic
fsum reduction.  theta0 evaluates the normal-ordered zero-boson kernel of
the dressed Hamiltonian at a spectral point; it vanishes identically at
the subtraction point by construction.

Window convention: the profile lives on kappa < |p| <= cutoff (open at
kappa), and both counterterms use the same window so that the linear one
is exactly the pairing of the coupling with the profile.
"""

import csv
import math
from dataclasses import dataclass, asdict

import numpy as np

from ._cubic import fsum_chunks, orbit_representatives
from .errors import AccuracyError, ContractViolation
from .lattice import (TWO_PI, ModelParams, build_lattice,
                      bogoliubov_energy_sq, form_factor_sq)

PAIR_CHUNK = 128


@dataclass
class CountertermReport:
    cutoff: float
    kappa: float
    e1: float
    e2: float
    lattice_size: int
    tail_bound: float = 0.0

    @property
    def e_total(self):
        return self.e1 + self.e2

    def csv_row(self):
        return [f"{self.cutoff:.17g}", f"{self.kappa:.17g}", f"{self.e1:.17g}",
                f"{self.e2:.17g}", f"{self.e_total:.17g}",
                f"{self.lattice_size}", f"{self.tail_bound:.17g}"]

    @staticmethod
    def csv_header():
        return ["cutoff", "kappa", "e1", "e2", "e_total", "lattice_size",
                "tail_bound"]


def gross_profile(p, params: ModelParams):
    """Dressing profile at one momentum: -w(p)/(p^2 + eps(p)) in the window."""
    p = np.asarray(p, dtype=float)
    p_sq = float(np.dot(p, p))
    if p_sq == 0.0:
        raise ContractViolation("profile undefined at the zero mode")
    if not params.kappa < math.sqrt(p_sq) <= params.cutoff:
        return 0.0
    eps = float(bogoliubov_energy_sq(p_sq, params.a_v))
    w = float(form_factor_sq(p_sq, params.a_w, params.a_v, params.cutoff))
    return -w / (p_sq + eps)


def _window_arrays(params: ModelParams, cutoff=None):
    """Lattice points in the window kappa < |p| <= cutoff with w, eps, f."""
    cut = params.cutoff if cutoff is None else cutoff
    lat = build_lattice(cut)
    p_sq = lat.norm_sq
    keep = np.sqrt(p_sq) > params.kappa
    ints = lat.ints[keep]
    p_sq = p_sq[keep]
    eps = bogoliubov_energy_sq(p_sq, params.a_v)
    w = form_factor_sq(p_sq, params.a_w, params.a_v, cut)
    f = -w / (p_sq + eps)
    return ints, p_sq, eps, w, f


def e_lambda_1(params: ModelParams):
    """Linear counterterm: sum of w(p) * f(p) over the window; <= 0.

    Equals -(8 pi a_w)^2 sum p^2 / (eps (p^2 + eps)) on the window.  An
    empty window (cutoff <= kappa or below the first shell) gives 0.
    """
    if params.cutoff <= params.kappa or params.cutoff < TWO_PI:
        return 0.0
    _, _, _, w, f = _window_arrays(params)
    return float(np.sum(w * f))


def e_lambda_2(params: ModelParams, use_symmetry=True):
    """Quadratic counterterm, the double sum over window pairs; <= 0.

    -2 sum_{p,q} (p.q)^2 f(p)^2 f(q)^2 / ((p+q)^2 + eps(p) + eps(q) + 1).
    Symmetry reduction runs one side over cubic-orbit representatives;
    use_symmetry=False is the O(M^2) oracle for small windows.
    """
    if params.cutoff <= params.kappa or params.cutoff < TWO_PI:
        return 0.0
    ints, p_sq, eps, w, f = _window_arrays(params)
    pts = TWO_PI * ints.astype(float)
    f_sq = f * f
    if use_symmetry:
        reps, weights = orbit_representatives(ints)
        rpts = TWO_PI * reps.astype(float)
        r_sq = (rpts * rpts).sum(axis=1)
        r_eps = bogoliubov_energy_sq(r_sq, params.a_v)
        r_w = form_factor_sq(r_sq, params.a_w, params.a_v, params.cutoff)
        r_fsq = (r_w / (r_sq + r_eps)) ** 2
    else:
        rpts, r_sq, r_eps, r_fsq = pts, p_sq, eps, f_sq
        weights = np.ones(len(pts))
    partials = []
    for i0 in range(0, len(rpts), PAIR_CHUNK):
        sl = slice(i0, min(i0 + PAIR_CHUNK, len(rpts)))
        dot = rpts[sl] @ pts.T
        den = (r_sq[sl, None] + p_sq[None, :] + 2.0 * dot
               + r_eps[sl, None] + eps[None, :] + 1.0)
        block = (weights[sl, None] * (dot * dot)
                 * (r_fsq[sl, None] * f_sq[None, :]) / den)
        partials.append(float(block.sum()))
    return -2.0 * fsum_chunks(partials)


def counterterms(params: ModelParams, tail_bound=0.0):
    rep = CountertermReport(params.cutoff, params.kappa, e_lambda_1(params),
                            e_lambda_2(params), build_lattice(params.cutoff).size,
                            tail_bound)
    return rep


def write_counterterm_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CountertermReport.csv_header())
        for rep in reports:
            w.writerow(rep.csv_row())


def theta0(params: ModelParams, impurity_momentum, phonon_energy,
           tol=1e-6, max_radius=None):
    """Zero-boson kernel of the dressed normal form at a spectral point.

    Evaluates

      2 sum_{k,l} (k.l)^2 f(k)^2 f(l)^2
          * ((g+k+l)^2 + E - (k+l)^2)
          / ([(g+k+l)^2 + eps_k + eps_l + E + 1] [(k+l)^2 + eps_k + eps_l + 1])

    at g = impurity_momentum, E = phonon_energy; this is the double sum
    minus its subtraction-point value written over a common denominator,
    so it vanishes identically at g = 0, E = 0.  cutoff = inf in params
    is handled by growing the window until the dyadic increment and an
    integral-comparison tail bound drop below tol.
    """
    if phonon_energy < 0:
        raise ContractViolation("phonon energy must be nonnegative")
    g = np.asarray(impurity_momentum, dtype=float)
    if not np.isfinite(params.cutoff):
        radius = max(8.0 * TWO_PI, 2.0 * params.kappa)
        prev = _theta0_finite(params, g, phonon_energy, radius)
        limit = max_radius or 64.0 * TWO_PI
        while True:
            radius *= 2.0
            if radius > limit:
                raise AccuracyError(
                    f"theta0 tail not below {tol:.1e} within radius {limit:.1f}")
            cur = _theta0_finite(params, g, phonon_energy, radius)
            tail = _theta0_tail_bound(params, g, phonon_energy, radius)
            if abs(cur - prev) < 0.5 * tol and tail < 0.5 * tol:
                return cur
            prev = cur
    return _theta0_finite(params, g, phonon_energy, params.cutoff)


def _theta0_finite(params, g, energy, cutoff):
    if cutoff <= params.kappa or cutoff < TWO_PI:
        return 0.0
    ints, p_sq, eps, w, f = _window_arrays(params, cutoff=cutoff)
    pts = TWO_PI * ints.astype(float)
    f_sq = f * f
    gp = pts @ g
    g_sq = float(np.dot(g, g))
    partials = []
    for i0 in range(0, len(pts), PAIR_CHUNK):
        sl = slice(i0, min(i0 + PAIR_CHUNK, len(pts)))
        dot = pts[sl] @ pts.T
        s_sq = p_sq[sl, None] + p_sq[None, :] + 2.0 * dot        # (k+l)^2
        eps2 = eps[sl, None] + eps[None, :]
        shifted = s_sq + 2.0 * (gp[sl, None] + gp[None, :]) + g_sq
        num = shifted + energy - s_sq
        den = (shifted + eps2 + energy + 1.0) * (s_sq + eps2 + 1.0)
        block = (dot * dot) * (f_sq[sl, None] * f_sq[None, :]) * num / den
        partials.append(float(block.sum()))
    return 2.0 * fsum_chunks(partials)


def _theta0_tail_bound(params, g, energy, radius):
    """Integral-comparison bound on the neglected |k| > radius tail.

    Uses f(p)^2 <= c / p^4 with c = (8 pi a_w)^2 / 4, |k.l| <= |k| |l|,
    |numerator| <= 2 |g| (|k| + |l|) + |g|^2 + E, and both denominator
    factors bounded below by (k^2 + l^2).  The resulting radial integrals
    give a C1 |g| / K + C2 (|g|^2 + E + 1) / K^2 envelope; a factor 4
    covers the two symmetric tails and sum-versus-integral slack.
    """
    c = (8.0 * np.pi * params.a_w) ** 2 / 4.0
    gn = float(np.linalg.norm(g))
    a = gn * gn + energy + 1.0
    K = max(radius, TWO_PI)
    term_lin = c * c * gn / (np.pi ** 3 * K)
    term_const = c * c * a / (16.0 * np.pi ** 3 * K * K)
    return 4.0 * (term_lin + term_const)
