"""Zero-energy scattering on the torus and in free space.

The torus problem is solved in Fourier space: with v >= 0 even, the
coefficients phi_hat satisfy

    p^2 phi(p) + 1/2 sum_q phi(q) vhat(p - q) = -1/2 vhat(p)

over the nonzero lattice.  The system is symmetric positive definite on
that subspace, so conjugate gradients apply; the convolution is evaluated
either by direct lattice sums (small lattices) or by a padded FFT (large
ones), and the two paths agree to 1e-10 on overlap.

The free-space scattering length comes from the radial reduction
u = r * f of the zero-energy equation, -u'' + 1/2 v(r) u = 0, integrated
outward; in the force-free region u is proportional to (r - a).
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

from .errors import AccuracyError, ContractViolation, SolverError
from .lattice import TWO_PI, MomentumLattice, build_lattice

DIRECT_CONV_THRESHOLD = 10_000   # lattice size below which direct sums run


# ---------------------------------------------------------------------------
# potentials

@dataclass(frozen=True)
class PotentialSpec:
    """A nonnegative even potential and its scaled family v_n = n^2 v(n x).

    kind: 'gaussian' (amplitude * exp(-r^2 / 2 range^2)),
          'compact_bump' (uniform spherical barrier of the given range),
          'tabulated_radial' (two-column table, radius ascending).
    scale_n is the family parameter n; Fourier data obeys
    vhat_n(k) = vhat(k/n) / n exactly.
    """

    kind: str
    amplitude: float = 1.0
    range: float = 0.25
    scale_n: float = 1.0
    table_r: np.ndarray = None
    table_v: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "compact_bump", "tabulated_radial"):
            raise ContractViolation(f"unknown potential kind {self.kind!r}")
        if self.amplitude < 0:
            raise ContractViolation("amplitude must be nonnegative")
        if self.range <= 0:
            raise ContractViolation("range must be positive")
        if self.scale_n < 1:
            raise ContractViolation("scale_n must be at least 1")
        if self.kind == "tabulated_radial":
            r = np.asarray(self.table_r, dtype=float)
            v = np.asarray(self.table_v, dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 4:
                raise ContractViolation("tabulated potential needs matching 1-d columns")
            if np.any(np.diff(r) <= 0):
                raise ContractViolation("tabulated radii must be strictly ascending")
            if np.any(v < 0):
                raise ContractViolation("potential must be nonnegative")
            if v.max() > 0 and self._table_moment() <= 0:
                raise ContractViolation("nonzero potential with vanishing integral")
            object.__setattr__(self, "table_r", r)
            object.__setattr__(self, "table_v", v)

    def _table_moment(self):
        r, v = np.asarray(self.table_r, float), np.asarray(self.table_v, float)
        return 4.0 * np.pi * np.trapezoid(r * r * v, r)

    def scaled(self, n):
        """The family member with scale parameter n (relative to the base)."""
        return replace(self, scale_n=float(n))

    def value(self, r):
        """Scaled position-space value v_n(r) = n^2 v(n r), radial."""
        n = self.scale_n
        r = np.asarray(r, dtype=float) * n
        if self.kind == "gaussian":
            base = self.amplitude * np.exp(-0.5 * (r / self.range) ** 2)
        elif self.kind == "compact_bump":
            base = np.where(r <= self.range, self.amplitude, 0.0)
        else:
            base = np.interp(r, self.table_r, self.table_v, left=self.table_v[0], right=0.0)
        return n * n * base

    def support_radius(self):
        """Radius beyond which the scaled potential is negligible."""
        if self.kind == "gaussian":
            base = 8.0 * self.range
        elif self.kind == "compact_bump":
            base = self.range
        else:
            base = float(self.table_r[-1])
        return base / self.scale_n

    def fourier_abs_k(self, k):
        """Fourier transform of the scaled potential at radial |k| (vectorized).

        Normalization: vhat(k) = integral v(x) exp(-i k x) dx, real and even.
        """
        n = self.scale_n
        k = np.asarray(k, dtype=float) / n
        if self.kind == "gaussian":
            s = self.range
            base = self.amplitude * (TWO_PI ** 1.5) * s ** 3 * np.exp(-0.5 * (s * k) ** 2)
        elif self.kind == "compact_bump":
            R = self.range
            u = k * R
            small = np.abs(u) < 1e-4
            k3 = np.where(small, 1.0, k) ** 3
            generic = 4.0 * np.pi * self.amplitude * (np.sin(u) - u * np.cos(u)) / k3
            series = 4.0 * np.pi * self.amplitude * R ** 3 * (1.0 / 3.0 - u * u / 30.0)
            base = np.where(small, series, generic)
        else:
            # 4*pi/k * int r v(r) sin(k r) dr on the table grid (trapezoid)
            r, v = self.table_r, self.table_v
            rv = r * v
            shape = np.shape(k)
            kk = np.atleast_1d(k).ravel()
            out = np.empty(kk.size)
            small = kk < 1e-9
            if small.any():
                out[small] = 4.0 * np.pi * np.trapezoid(r * rv, r)
            idx = np.flatnonzero(~small)
            for i0 in range(0, idx.size, 4096):
                sel = idx[i0:i0 + 4096]
                sinm = np.sin(np.outer(kk[sel], r))
                out[sel] = (4.0 * np.pi / kk[sel]) * np.trapezoid(sinm * rv, r, axis=1)
            base = out.reshape(shape)
        return np.asarray(base) / n

    def fourier_point(self, p):
        """Fourier coefficient at a 3-vector momentum."""
        p = np.asarray(p, dtype=float)
        return float(np.asarray(self.fourier_abs_k(np.linalg.norm(p))))

    def fourier_on_lattice(self, lat: MomentumLattice):
        return np.asarray(self.fourier_abs_k(np.sqrt(lat.norm_sq)))


def load_tabulated_potential(path, scale_n=1.0):
    """Read a two-column (r, v(r)) text file; '#' starts a comment line."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ContractViolation("expected two columns (r, v)")
    return PotentialSpec("tabulated_radial", amplitude=1.0, range=float(data[-1, 0]),
                         scale_n=scale_n, table_r=data[:, 0], table_v=data[:, 1])


# ---------------------------------------------------------------------------
# convolution backends

class _ConvolutionEngine:
    """Evaluates x -> sum_q vhat(p - q) x(q) over a lattice ball."""

    def __init__(self, v: PotentialSpec, lat: MomentumLattice):
        self.lat = lat
        self.r_int = int(np.floor(lat.cutoff_radius / TWO_PI + 1e-12))
        # the kernel cube reaches per-axis differences of 2 r_int, so the
        # radial table must cover |d|^2 up to 12 r_int^2
        smax = 12 * self.r_int * self.r_int + 1
        self.radial = np.asarray(v.fourier_abs_k(TWO_PI * np.sqrt(np.arange(smax + 1.0))))
        self.direct = lat.size <= DIRECT_CONV_THRESHOLD
        if self.direct:
            # float coordinates so the pair dot products run through BLAS;
            # squared differences are integers well below 2^53, so exact
            self._fpts = lat.ints.astype(float)
            self._self_sq = (lat.ints * lat.ints).sum(axis=1).astype(float)
        else:
            self._setup_fft()

    def _setup_fft(self):
        R = self.r_int
        side = 2 * R + 1
        L = sfft.next_fast_len(4 * R + 1, real=True)
        self.side, self.L = side, L
        idx = self.lat.ints + R
        self.flat_idx = np.ravel_multi_index((idx[:, 0], idx[:, 1], idx[:, 2]),
                                             (side, side, side))
        d = np.arange(-2 * R, 2 * R + 1)
        DX, DY, DZ = np.meshgrid(d, d, d, indexing="ij")
        s = DX * DX + DY * DY + DZ * DZ
        kernel = np.zeros((L, L, L))
        kernel[DX % L, DY % L, DZ % L] = self.radial[s]
        self.kernel_hat = sfft.rfftn(kernel)
        del kernel

    def apply(self, x):
        if self.direct:
            return self._apply_direct(x)
        return self._apply_fft(x)

    def _apply_direct(self, x, chunk=512):
        pts, ssq = self._fpts, self._self_sq
        out = np.empty_like(x)
        for i0 in range(0, pts.shape[0], chunk):
            dot = pts[i0:i0 + chunk] @ pts.T
            diff_sq = ssq[i0:i0 + chunk, None] + ssq[None, :] - 2.0 * dot
            out[i0:i0 + chunk] = self.radial[diff_sq.astype(np.intp)] @ x
        return out

    def _apply_fft(self, x):
        L, side = self.L, self.side
        grid = np.zeros((side, side, side))
        grid.reshape(-1)[self.flat_idx] = x
        padded = np.zeros((L, L, L))
        padded[:side, :side, :side] = grid
        conv = sfft.irfftn(sfft.rfftn(padded) * self.kernel_hat, s=(L, L, L))
        return conv[:side, :side, :side].reshape(-1)[self.flat_idx].copy()


# ---------------------------------------------------------------------------
# torus solve

@dataclass(frozen=True)
class ScatteringSolution:
    """Solved Fourier coefficients phi_hat on a lattice, plus derived scalars."""

    lattice: MomentumLattice
    phi_hat: np.ndarray
    residual_norm: float
    torus_length: float
    source_potential: PotentialSpec
    truncation: float = 0.0

    def __post_init__(self):
        self.phi_hat.setflags(write=False)

    def sup_phi_hat(self):
        return float(np.max(np.abs(self.phi_hat), initial=0.0))

    def sup_p2_phi_hat(self):
        return float(np.max(self.lattice.norm_sq * np.abs(self.phi_hat), initial=0.0))

    def l1_phi_hat(self):
        """An upper bound for the position-space sup norm of phi."""
        return float(np.sum(np.abs(self.phi_hat)))


def _torus_length_from(vhat, phi_hat, coupling_scale):
    return float(coupling_scale * (vhat[0] + np.dot(vhat[1:], phi_hat))) / (8.0 * np.pi)


def solve_torus_scattering(v: PotentialSpec, lat: MomentumLattice, tol=1e-10,
                           max_iter=400):
    """Solve the Fourier-space zero-energy equation on the lattice ball.

    Returns a ScatteringSolution whose substitution residual (2-norm,
    relative to ||vhat||_2) is at most tol.  Preconditioned CG on the
    positive system; non-convergence raises SolverError with the last
    residual attached.
    """
    if v.amplitude < 0:
        raise ContractViolation("potential must be nonnegative")
    engine = _ConvolutionEngine(v, lat)
    p_sq = lat.norm_sq
    vhat = engine.radial[(lat.ints * lat.ints).sum(axis=1)]
    vhat0 = float(engine.radial[0])
    # the truncation error enters the scattering length quadratically in
    # the edge amplitude, so a few-percent edge ratio is already benign
    edge = float(np.max(np.abs(vhat[p_sq >= 0.81 * lat.cutoff_radius ** 2]), initial=0.0))
    if vhat0 > 0 and edge > 3e-2 * vhat0:
        warnings.warn("potential Fourier data has not decayed at the lattice edge; "
                      "increase the cutoff for reliable scattering output",
                      stacklevel=2)

    if vhat0 == 0.0 and v.amplitude == 0.0:
        phi = np.zeros(lat.size)
        return ScatteringSolution(lat, phi, 0.0, 0.0, v)

    def matvec(x):
        return p_sq * x + 0.5 * engine.apply(x)

    b = -0.5 * vhat
    norm_b = float(np.linalg.norm(vhat))
    target = tol * norm_b
    # Jacobi preconditioner: the diagonal of the operator is p^2 + vhat(0)/2
    inv_diag = 1.0 / (p_sq + 0.5 * vhat0)

    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    d = z.copy()
    rz = float(np.dot(r, z))
    res = float(np.linalg.norm(r))
    it = 0
    while res > target and it < max_iter:
        ad = matvec(d)
        alpha = rz / float(np.dot(d, ad))
        x += alpha * d
        r -= alpha * ad
        res = float(np.linalg.norm(r))
        z = inv_diag * r
        rz_new = float(np.dot(r, z))
        d = z + (rz_new / rz) * d
        rz = rz_new
        it += 1
    # one exact residual evaluation, independent of the recursion
    res = float(np.linalg.norm(matvec(x) - b))
    if res > target:
        raise SolverError(f"CG stalled at residual {res:.3e} (target {target:.3e})",
                          last_residual=res, iterations=it)
    length = _torus_length_from(np.concatenate(([vhat0], vhat)), x, 1.0)
    return ScatteringSolution(lat, x, res, length, v)


def torus_scattering_length(sol: ScatteringSolution, coupling_scale=1.0):
    """(coupling_scale / 8 pi) * (vhat(0) + sum_p vhat(-p) phi_hat(p))."""
    vhat = sol.source_potential.fourier_on_lattice(sol.lattice)
    vhat0 = float(np.asarray(sol.source_potential.fourier_abs_k(0.0)))
    return _torus_length_from(np.concatenate(([vhat0], vhat)), sol.phi_hat,
                              coupling_scale)


def truncate_solution(sol: ScatteringSolution, m):
    """Zero out phi_hat below momentum m; recompute the derived scalars."""
    if m < 0:
        raise ContractViolation("truncation momentum must be nonnegative")
    mask = sol.lattice.norm_sq > m * m
    phi = np.where(mask, sol.phi_hat, 0.0)
    engine = _ConvolutionEngine(sol.source_potential, sol.lattice)
    vhat = sol.source_potential.fourier_on_lattice(sol.lattice)
    vhat0 = float(np.asarray(sol.source_potential.fourier_abs_k(0.0)))
    res = float(np.linalg.norm(sol.lattice.norm_sq * phi + 0.5 * engine.apply(phi)
                               + 0.5 * vhat))
    length = _torus_length_from(np.concatenate(([vhat0], vhat)), phi, 1.0)
    return ScatteringSolution(sol.lattice, phi, res, length, sol.source_potential,
                              truncation=float(m))


def sobolev_norm(sol: ScatteringSolution, s):
    """(sum_p |p|^(2s) |phi_hat(p)|^2)^(1/2) for -1 <= s <= 2."""
    if not -1.0 <= s <= 2.0:
        raise ContractViolation("sobolev order restricted to [-1, 2]")
    return float(np.sqrt(np.sum(sol.lattice.norm_sq ** s * sol.phi_hat ** 2)))


# ---------------------------------------------------------------------------
# free space

def free_space_scattering_length(v: PotentialSpec, grid_points=4000, r_max=None,
                                 tol=1e-8):
    """Scattering length of the (radial, scaled) potential on free space.

    Integrates -u'' + v u / 2 = 0 with u(0) = 0 outward by classical RK4
    and reads off a = r - u/u' in the force-free region.  A half-step
    refinement must agree to tol, otherwise AccuracyError is raised.
    """
    if grid_points < 16:
        raise ContractViolation("grid too small")
    if r_max is None:
        r_max = 1.25 * v.support_radius()
    if r_max <= v.support_radius() * 0.99:
        raise ContractViolation("r_max must exceed the potential range")

    def extract(n_steps):
        h = r_max / n_steps
        u, w = 0.0, 1.0

        def slope(r, u_):
            return 0.5 * v.value(r) * u_

        r = 0.0
        for _ in range(n_steps):
            k1u, k1w = w, slope(r, u)
            k2u, k2w = w + 0.5 * h * k1w, slope(r + 0.5 * h, u + 0.5 * h * k1u)
            k3u, k3w = w + 0.5 * h * k2w, slope(r + 0.5 * h, u + 0.5 * h * k2u)
            k4u, k4w = w + h * k3w, slope(r + h, u + h * k3u)
            u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
            w += h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
            r += h
        return r_max - u / w

    coarse = extract(grid_points)
    fine = extract(2 * grid_points)
    if abs(fine - coarse) > tol * max(1.0, abs(fine)):
        raise AccuracyError(
            f"scattering length moved by {abs(fine - coarse):.3e} under grid "
            f"refinement (tol {tol:.1e}); the grid is too coarse")
    return fine


def rate_fit(pairs):
    """Least-squares fit of log(value) against log(n) -> (exponent, constant)."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ContractViolation("need at least 3 (n, value) pairs")
    n = np.array([float(p[0]) for p in pairs])
    val = np.array([float(p[1]) for p in pairs])
    if np.any(n <= 0) or np.any(val <= 0):
        raise ContractViolation("rate_fit needs positive abscissas and values")
    slope, intercept = np.polyfit(np.log(n), np.log(val), 1)
    return float(slope), float(np.exp(intercept))
