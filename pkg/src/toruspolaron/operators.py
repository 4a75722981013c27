"""Operators on a sector basis: the cutoff impurity-phonon Hamiltonian,
number-type diagonals, Weyl unitaries, and the dressed normal form.

In a fixed total-momentum sector the impurity coordinate is implicit:
creating a boson in mode p shifts the impurity momentum by -p, so the
coupling amplitudes are real and every sector operator here is real
symmetric.  Matrix-free applies enumerate single-boson moves per state;
dense assembly is reserved for small verification instances.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import expm

from . import eig
from .errors import AccuracyError, CapacityError, ContractViolation
from .fock import SectorBasis, rank_multisets
from .lattice import (TWO_PI, ModelParams, MomentumLattice,
                      bogoliubov_energy_sq, form_factor_sq)

WEYL_DENSE_CAP = 4000


# ---------------------------------------------------------------------------
# handles

@dataclass
class OperatorHandle:
    """Matrix-free symmetric operator on a sector basis."""

    basis: SectorBasis
    apply: callable
    diag: np.ndarray = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.basis.dim


@dataclass
class DenseOperator:
    basis: SectorBasis
    matrix: np.ndarray
    label: str = ""

    @property
    def dim(self):
        return self.matrix.shape[0]

    def hermiticity_defect(self):
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def unitarity_defect(self):
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))

    def save(self, path):
        """Binary container: magic, dtype flag, int64 dim, row-major entries."""
        with open(path, "wb") as fh:
            fh.write(b"TPOP")
            is_complex = np.iscomplexobj(self.matrix)
            fh.write(np.array([1 if is_complex else 0, self.dim],
                              dtype=np.int64).tobytes())
            fh.write(np.ascontiguousarray(self.matrix).tobytes())


def load_dense(path, basis=None):
    with open(path, "rb") as fh:
        if fh.read(4) != b"TPOP":
            raise ContractViolation("not a dense-operator container")
        flags = np.frombuffer(fh.read(16), dtype=np.int64)
        dtype = np.complex128 if flags[0] else np.float64
        n = int(flags[1])
        mat = np.frombuffer(fh.read(), dtype=dtype).reshape(n, n).copy()
    return DenseOperator(basis, mat, label="loaded")


# ---------------------------------------------------------------------------
# edge enumeration (single-boson creation moves between count blocks)

def _creation_edges(basis: SectorBasis):
    """Edges (src, tgt, mode, sqrt_n) for every a^dag move, each once.

    Enumerated from the target block by deleting one slot per distinct
    occupied mode; sqrt_n is sqrt(occupation in the target state).
    """
    M = basis.lattice.size
    src, tgt, mode, amp = [], [], [], []
    for j in range(1, basis.n_max + 1):
        states = basis.blocks[j]
        if states.shape[0] == 0:
            continue
        base_t = int(basis.offsets[j])
        base_s = int(basis.offsets[j - 1])
        D = states.shape[0]
        source_block_full = basis.blocks[j - 1].shape[0] == _full_block_size(M, j - 1)
        for t in range(j):
            first = np.ones(D, dtype=bool) if t == 0 else states[:, t] != states[:, t - 1]
            rows = np.flatnonzero(first)
            sub = np.delete(states[rows], t, axis=1)
            occ = (states[rows] == states[rows, t][:, None]).sum(axis=1)
            targets = rows + base_t
            if source_block_full:
                ranks = rank_multisets(sub, M) + base_s
            else:
                # filtered basis (impurity-lattice oracle): edges whose source
                # fell outside the filter carry zero coupling and are dropped
                ranks = np.fromiter(
                    (basis.index.get(tuple(int(x) for x in r), -1) for r in sub),
                    dtype=np.int64, count=sub.shape[0])
                present = ranks >= 0
                ranks, targets = ranks[present], targets[present]
                occ = occ[present]
                rows = rows[present]
            src.append(ranks)
            tgt.append(targets)
            mode.append(states[rows, t].astype(np.int64))
            amp.append(np.sqrt(occ.astype(float)))
    if not src:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, np.zeros(0)
    return (np.concatenate(src), np.concatenate(tgt),
            np.concatenate(mode), np.concatenate(amp))


def _full_block_size(M, j):
    from math import comb
    return comb(M + j - 1, j)


def hbf_diagonal(basis: SectorBasis, params: ModelParams):
    """Impurity recoil (p_total - sum n_k k)^2 plus the phonon energy."""
    imp = TWO_PI * basis.impurity_momentum_int().astype(float)
    diag = (imp * imp).sum(axis=1)
    eps = bogoliubov_energy_sq(basis.lattice.norm_sq, params.a_v)
    out = np.empty(basis.dim)
    for j in range(basis.n_max + 1):
        sl = slice(int(basis.offsets[j]), int(basis.offsets[j + 1]))
        if j == 0:
            out[sl] = 0.0
        else:
            out[sl] = eps[basis.blocks[j]].sum(axis=1)
    return diag + out


def hbf_operator(basis: SectorBasis, params: ModelParams):
    """Matrix-free cutoff Hamiltonian on the sector.

    Diagonal: impurity recoil plus phonon energies.  Off-diagonal: one
    boson created (or annihilated) in any mode within the coupling cutoff,
    amplitude form_factor(p) * sqrt(n_p + 1); creation beyond the boson
    cap contributes nothing.
    """
    if params.cutoff > basis.lattice.cutoff_radius * (1 + 1e-12):
        raise ContractViolation(
            "coupling cutoff exceeds the basis lattice; rebuild the lattice")
    diag = hbf_diagonal(basis, params)
    src, tgt, mode, amp = _creation_edges(basis)
    w = form_factor_sq(basis.lattice.norm_sq, params.a_w, params.a_v,
                       params.cutoff)
    vals = w[mode] * amp
    keep = vals != 0.0
    src, tgt, vals = src[keep], tgt[keep], vals[keep]
    dim = basis.dim

    def apply(x):
        x = np.asarray(x, dtype=float)
        y = diag * x
        if len(vals):
            y += np.bincount(tgt, weights=vals * x[src], minlength=dim)
            y += np.bincount(src, weights=vals * x[tgt], minlength=dim)
        return y

    return OperatorHandle(basis, apply, diag=diag, label="hbf",
                          meta={"cutoff": params.cutoff, "n_max": basis.n_max,
                                "p_total": basis.p_total})


def dgamma_operator(basis: SectorBasis, symbol):
    """Diagonal second quantization sum_k n_k * symbol(k).

    symbol: callable on 3-vectors or an array over lattice modes.
    symbol == 1 gives the boson number operator.
    """
    lat = basis.lattice
    if callable(symbol):
        vals = np.array([float(symbol(p)) for p in lat.points])
    else:
        vals = np.asarray(symbol, dtype=float)
        if vals.shape != (lat.size,):
            raise ContractViolation("symbol array must cover every lattice mode")
    diag = np.empty(basis.dim)
    for j in range(basis.n_max + 1):
        sl = slice(int(basis.offsets[j]), int(basis.offsets[j + 1]))
        diag[sl] = 0.0 if j == 0 else vals[basis.blocks[j]].sum(axis=1)

    def apply(x):
        return diag * np.asarray(x, dtype=float)

    return OperatorHandle(basis, apply, diag=diag, label="dgamma")


# ---------------------------------------------------------------------------
# dense assembly

def _creation_matrices(basis: SectorBasis, coeffs):
    """Sparse operator sum_p coeffs[p] * a^dag_p (in-sector phases implicit)."""
    src, tgt, mode, amp = _creation_edges(basis)
    c = np.asarray(coeffs)
    vals = c[mode] * amp
    return sparse.coo_matrix((vals, (tgt, src)),
                             shape=(basis.dim, basis.dim)).tocsr()


def hbf_dense(basis: SectorBasis, params: ModelParams):
    """Dense assembly of hbf_operator, for verification-sized sectors."""
    if basis.dim > WEYL_DENSE_CAP:
        raise CapacityError(f"dense assembly capped at {WEYL_DENSE_CAP}",
                            requested=basis.dim, limit=WEYL_DENSE_CAP)
    w = form_factor_sq(basis.lattice.norm_sq, params.a_w, params.a_v,
                       params.cutoff)
    up = _creation_matrices(basis, w)
    mat = np.diag(hbf_diagonal(basis, params)) + (up + up.T).toarray()
    return DenseOperator(basis, mat, label="hbf-dense")


def weyl_unitary(basis: SectorBasis, profile):
    """exp(a^dag(f) - a(f)) as a dense sector matrix.

    profile: per-mode coefficients f_hat(p) (real or complex); the
    impurity-momentum shift created by the mode's phase is automatic in
    the sector bookkeeping.  The result is unitary to 1e-9.
    """
    if basis.dim > WEYL_DENSE_CAP:
        raise CapacityError(f"dense Weyl path capped at {WEYL_DENSE_CAP}",
                            requested=basis.dim, limit=WEYL_DENSE_CAP)
    prof = np.asarray(profile)
    if prof.shape != (basis.lattice.size,):
        raise ContractViolation("profile must cover every lattice mode")
    up = _creation_matrices(basis, prof)
    gen = (up - up.conj().T).toarray()
    u = expm(gen)
    defect = float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
    if defect > 1e-9:
        raise AccuracyError(f"Weyl exponential lost unitarity ({defect:.2e})")
    return DenseOperator(basis, u, label="weyl")


def gross_profile_array(lat: MomentumLattice, params: ModelParams):
    """Dressing profile -w(p) / (p^2 + eps(p)) on kappa < |p| <= cutoff."""
    p_sq = lat.norm_sq
    eps = bogoliubov_energy_sq(p_sq, params.a_v)
    w = form_factor_sq(p_sq, params.a_w, params.a_v, params.cutoff)
    prof = -w / (p_sq + eps)
    prof[np.sqrt(p_sq) <= params.kappa] = 0.0
    return prof


def dressed_rhs(basis: SectorBasis, params: ModelParams):
    """Normal form of the Weyl-conjugated Hamiltonian, assembled dense.

    Terms, in display order: free impurity and phonon parts, the coupling
    below kappa, the squared gradient-profile creations/annihilations, the
    mixed gradient term, the gradient-impurity cross terms (profile to the
    left of the impurity momentum, then reversed), and the scalar
    <w_x, f_x> which equals the linear counterterm.
    """
    if params.kappa > params.cutoff:
        raise ContractViolation("kappa must not exceed the coupling cutoff")
    if basis.dim > WEYL_DENSE_CAP:
        raise CapacityError(f"dense assembly capped at {WEYL_DENSE_CAP}",
                            requested=basis.dim, limit=WEYL_DENSE_CAP)
    lat = basis.lattice
    p_sq = lat.norm_sq
    w_kappa = form_factor_sq(p_sq, params.a_w, params.a_v,
                             min(params.kappa, params.cutoff))
    prof = gross_profile_array(lat, params)
    w_full = form_factor_sq(p_sq, params.a_w, params.a_v, params.cutoff)

    diag = sparse.diags(hbf_diagonal(basis, params))
    low = _creation_matrices(basis, w_kappa)
    total = diag + low + low.T

    # C_j = a^dag((i grad f)_j) has per-mode coefficients -p_j * f_hat(p)
    pts = lat.points
    C = [_creation_matrices(basis, -pts[:, j] * prof) for j in range(3)]
    # i grad_x acts as minus the implicit impurity momentum, diagonal per state
    imp = TWO_PI * basis.impurity_momentum_int().astype(float)
    D = [sparse.diags(-imp[:, j]) for j in range(3)]

    for j in range(3):
        cj, dj = C[j], D[j]
        cc = cj @ cj
        total = total + cc + cc.T                      # a*(i grad f)^2 + h.c.
        total = total + 2.0 * (cj @ cj.T)              # 2 a*(.) a(.)
        total = total - 2.0 * (cj @ dj) - 2.0 * (dj @ cj.T)
    scalar = float(np.dot(w_full, prof))               # <w_x, f_x> = E1
    mat = total.toarray() + scalar * np.eye(basis.dim)
    return DenseOperator(basis, mat, label="dressed-rhs")


# ---------------------------------------------------------------------------
# tensor-product oracle (truncated impurity lattice, no sector reduction)

def tensor_product_dense(impurity_lattice: MomentumLattice,
                         basis: SectorBasis, params: ModelParams):
    """Full Hamiltonian on (impurity momentum basis) x (boson occupations).

    The basis argument supplies the boson occupation list (its p_total is
    ignored); couplings that would push the impurity off its truncated
    lattice vanish, exactly as in the filtered sector construction.
    """
    imp_ints = impurity_lattice.ints
    n_imp = imp_ints.shape[0]
    dim = n_imp * basis.dim
    if dim > WEYL_DENSE_CAP:
        raise CapacityError("tensor oracle is a micro-scale verification tool",
                            requested=dim, limit=WEYL_DENSE_CAP)
    eps = bogoliubov_energy_sq(basis.lattice.norm_sq, params.a_v)
    w = form_factor_sq(basis.lattice.norm_sq, params.a_w, params.a_v,
                       params.cutoff)
    boson_diag = np.empty(basis.dim)
    for j in range(basis.n_max + 1):
        sl = slice(int(basis.offsets[j]), int(basis.offsets[j + 1]))
        boson_diag[sl] = 0.0 if j == 0 else eps[basis.blocks[j]].sum(axis=1)
    imp_diag = (TWO_PI ** 2) * (imp_ints * imp_ints).sum(axis=1).astype(float)

    mat = np.zeros((dim, dim))
    idx = lambda i_imp, i_b: i_imp * basis.dim + i_b
    for i_imp in range(n_imp):
        for i_b in range(basis.dim):
            mat[idx(i_imp, i_b), idx(i_imp, i_b)] = imp_diag[i_imp] + boson_diag[i_b]
    src, tgt, mode, amp = _creation_edges(basis)
    imp_index = impurity_lattice.index_of
    for s, t, md, a in zip(src, tgt, mode, amp):
        shift = basis.lattice.ints[md]
        coupling = w[md] * a
        if coupling == 0.0:
            continue
        for i_imp in range(n_imp):
            target_imp = tuple(int(c) for c in (imp_ints[i_imp] - shift))
            if target_imp in imp_index:
                ti = imp_index[target_imp]
                mat[idx(ti, t), idx(i_imp, s)] += coupling
                mat[idx(i_imp, s), idx(ti, t)] += coupling
    return DenseOperator(None, mat, label="tensor-oracle")


def tensor_total_momenta(impurity_lattice: MomentumLattice, basis: SectorBasis):
    """Distinct total momenta present in the tensor-product basis."""
    out = set()
    for i_imp in range(impurity_lattice.size):
        pi = impurity_lattice.ints[i_imp]
        for k in basis.boson_momentum:
            out.add(tuple(int(c) for c in (pi + k)))
    return sorted(out)


# ---------------------------------------------------------------------------
# boson-pair sector (n_max = 2) ground spectrum via Feshbach elimination

def pair_sector_lowest(lat: MomentumLattice, params: ModelParams, k=3,
                       tol=1e-8, seed=0, inner_tol=1e-9, max_newton=60,
                       warm=None):
    """Lowest k eigenvalues of the n_max = 2 sector, memory O(M^2).

    With at most two bosons the two-boson block of the Hamiltonian is
    diagonal, so it can be eliminated exactly: eigenvalues below that
    block are fixed points of mu_j(lam), the j-th eigenvalue of the
    effective operator on the (vacuum + one-boson) space

        S(lam) = H_01 - H_12 (D_2 - lam)^(-1) H_21 .

    mu_j is decreasing in lam, so each fixed point is unique and Newton
    iteration (the derivative is -|phi_2|^2 of the eliminated component)
    converges monotonically.  Exact in exact arithmetic; no basis
    enumeration or hash maps are needed.
    """
    if params.n_max != 2:
        raise ContractViolation("pair solver requires n_max = 2")
    if params.cutoff > lat.cutoff_radius * (1 + 1e-12):
        raise ContractViolation("coupling cutoff exceeds the lattice")
    M = lat.size
    pts = lat.points
    p_sq = lat.norm_sq
    eps = bogoliubov_energy_sq(p_sq, params.a_v)
    w = form_factor_sq(p_sq, params.a_w, params.a_v, params.cutoff)
    ptot = params.p_total_momentum
    d0 = float(np.dot(ptot, ptot))
    rec1 = ptot[None, :] - pts
    d1 = (rec1 * rec1).sum(axis=1) + eps

    # two-boson diagonal |ptot - p - q|^2 + eps(p) + eps(q), built in place
    D2 = np.matmul(pts, pts.T)
    D2 *= 2.0
    tp = pts @ ptot
    add = p_sq + eps - 2.0 * tp
    D2 += add[:, None]
    D2 += add[None, :]
    D2 += d0
    d2_min = float(D2.min())

    R = np.empty_like(D2)
    w_sq = w * w

    def refresh(lam):
        np.subtract(D2, lam, out=R)
        np.reciprocal(R, out=R)

    def schur_matvec(x):
        x0, x1 = x[0], x[1:]
        y = np.empty_like(x)
        y[0] = d0 * x0 + float(np.dot(w, x1))
        core = d1 * x1 + w * x0
        core -= rw2 * x1
        core -= w * (R @ (w * x1))
        y[1:] = core
        return y

    def eliminated_norm_sq(x1):
        # |(D2-lam)^{-1} H_12 x1|^2; rows of the pair component are
        # R * (w_p x_q + x_p w_q) / sqrt(2) in the symmetric-matrix picture
        total = 0.0
        for i0 in range(0, M, 1024):
            sl = slice(i0, min(i0 + 1024, M))
            phi = R[sl] * (w[sl, None] * x1[None, :] + x1[sl, None] * w[None, :])
            total += float((phi * phi).sum()) / 2.0
        return total

    guesses = warm if warm is not None else {}
    evals = np.empty(k)
    diags = {"newton_steps": [], "applies": 0, "d2_min": d2_min}
    # second-order perturbation theory seeds the ground fixed point
    pt2 = d0 - float(np.sum(w_sq / np.maximum(d1 - d0, 1e-9)))
    lam = float(guesses.get(0, min(pt2 * 1.05, d2_min - 1.0)))
    vec_cache = None
    for j in range(k):
        lam = float(guesses.get(j, lam))
        lam = min(lam, d2_min - 1e-6)
        steps = 0
        gap = np.inf
        n_ritz = min(j + 3, M + 1)     # buffer resolves degenerate clusters
        while True:
            refresh(lam)
            rw2 = R @ w_sq
            # loose eigensolves far from the fixed point, tight near it
            itol = inner_tol if gap <= 1e3 * tol * (1 + abs(lam)) else \
                min(1e-5, max(inner_tol, 1e-3 * gap / (1.0 + abs(lam))))
            res = eig.lanczos_core(schur_matvec, M + 1, n_ritz, tol=itol,
                                   max_iter=20_000, seed=seed, start=vec_cache,
                                   subspace=min(max(4 * n_ritz + 20, 72), M + 1))
            diags["applies"] += res["applies"]
            mu = float(res["theta"][j])
            x = res["X"]
            vec_cache = x.T
            x1 = x[1:, j]
            slope = eliminated_norm_sq(x1)
            new_lam = lam + (mu - lam) / (1.0 + slope)
            steps += 1
            gap = abs(mu - lam)
            if gap <= tol * (1.0 + abs(lam)) or steps >= max_newton:
                if steps >= max_newton and gap > tol * (1.0 + abs(lam)):
                    raise AccuracyError(
                        f"pair-sector fixed point stalled at level {j}")
                evals[j] = new_lam
                lam = new_lam
                break
            if new_lam >= d2_min:
                new_lam = 0.5 * (lam + d2_min)
            lam = new_lam
        diags["newton_steps"].append(steps)
    if np.any(np.diff(evals) < -1e-6 * (1.0 + np.abs(evals[:-1]))):
        raise AccuracyError("pair-sector fixed points came out unordered; "
                            "an inner eigensolve missed a cluster member")
    return evals, diags
