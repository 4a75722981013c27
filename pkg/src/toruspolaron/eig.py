"""Lowest eigenpairs of symmetric operators, matrix-free.

The workhorse is a restarted Lanczos iteration with full
reorthogonalization of the active block: a bounded-size orthonormal
basis is grown one matrix apply at a time, Rayleigh-Ritz is performed
on the projected matrix, and on restart the best Ritz vectors are
retained (thick restart).  Full reorthogonalization keeps ghost
eigenvalues out of the cutoff-flow data this package exists to produce.

Returned residuals are re-verified with one extra operator apply per
pair; non-convergence is reported, never silently wrong values.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ContractViolation

DENSE_CAP = 4000


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    residual_norms: np.ndarray
    iterations: int
    basis_meta: dict
    converged: bool
    vectors: np.ndarray = field(default=None, repr=False)
    tolerance: float = 0.0

    def multiplicities(self):
        """Cluster sizes among returned eigenvalues, width 1e3 * tolerance."""
        width = 1e3 * self.tolerance if self.tolerance > 0 else 1e-9
        out, i = [], 0
        vals = self.eigenvalues
        while i < len(vals):
            j = i
            while j + 1 < len(vals) and vals[j + 1] - vals[i] <= width:
                j += 1
            out.append(j - i + 1)
            i = j + 1
        return out

    def to_json(self):
        return json.dumps({
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residual_norms": [float(v) for v in self.residual_norms],
            "iterations": int(self.iterations),
            "basis_meta": self.basis_meta,
            "converged": bool(self.converged),
            "tolerance": float(self.tolerance),
        }, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue", "residual_norm"])
            for i, (ev, rn) in enumerate(zip(self.eigenvalues, self.residual_norms)):
                w.writerow([i, f"{ev:.17g}", f"{rn:.17g}"])


def _orthonormalize_rows(block, against=None, tol=1e-12):
    """Deterministic two-pass Gram-Schmidt; drops numerically null rows."""
    out = []
    for row in block:
        v = row.astype(float).copy()
        for _ in range(2):
            if against is not None and len(against):
                v -= against.T @ (against @ v)
            for u in out:
                v -= u * np.dot(u, v)
        nrm = np.linalg.norm(v)
        if nrm > tol:
            out.append(v / nrm)
    return out


def lanczos_core(matvec, n, k, tol=1e-9, max_iter=10_000, seed=0, start=None,
                 subspace=None):
    """Thick-restart Lanczos on a symmetric matvec.

    start may carry one or more warm-start vectors (a vector or rows);
    subspace bounds the active block size.  The projected matrix is built
    by explicit projection onto the fully reorthogonalized basis, so the
    retained-Ritz (arrow) couplings after a restart come out correct
    without separate bookkeeping.  Returns a dict with Ritz data; residual
    norms are the |beta * s| estimates, not yet re-verified.
    """
    if not 1 <= k <= n:
        raise ContractViolation(f"need 1 <= k <= dim, got k={k}, dim={n}")
    m = min(subspace or max(2 * k + 12, 24), n)
    keep = min(k + 6, m - 2) if m - 2 >= k else max(1, m - 1)
    rng = np.random.default_rng(seed)

    V = np.zeros((m + 1, n))
    rows = []
    if start is not None:
        rows = _orthonormalize_rows(np.atleast_2d(np.asarray(start, dtype=float)))
        rows = rows[:max(1, m - 2)]
    if not rows:
        rows = _orthonormalize_rows(rng.standard_normal((1, n)))
    for i, r in enumerate(rows):
        V[i] = r

    T = np.zeros((m + 1, m + 1))
    applies = 0
    anorm = 0.0
    exhausted = False

    # warm-start seeds occupy rows 0..r-1; their T columns come from pure
    # projection (the out-of-span remainders are rediscovered later), and
    # Krylov growth continues from the last seed
    for j in range(len(rows) - 1):
        h = V[:len(rows)] @ matvec(V[j])
        applies += 1
        T[:len(rows), j] = h
        T[j, :len(rows)] = h
    j_start = len(rows) - 1

    def fresh_direction(j):
        """A random unit vector orthogonal to V[:j]; None if space is full."""
        for _ in range(5):
            cand = _orthonormalize_rows(rng.standard_normal((1, n)), against=V[:j])
            if cand:
                return cand[0]
        return None

    while True:
        j = j_start
        beta_m = 0.0
        while j < m:
            w = matvec(V[j])
            applies += 1
            h = V[:j + 1] @ w
            w = w - V[:j + 1].T @ h
            h2 = V[:j + 1] @ w
            w -= V[:j + 1].T @ h2
            h += h2
            T[:j + 1, j] = h
            T[j, :j + 1] = h
            beta = float(np.linalg.norm(w))
            if beta <= 1e-13 * max(anorm, 1.0):
                if j + 1 >= n:
                    exhausted = True
                    m = j + 1
                    break
                nxt = fresh_direction(j + 1)
                if nxt is None:
                    exhausted = True
                    m = j + 1
                    break
                V[j + 1] = nxt
                beta_m = 0.0
            else:
                V[j + 1] = w / beta
                T[j + 1, j] = beta
                T[j, j + 1] = beta
                beta_m = beta
            j += 1
        j_start = 0

        vals, S = np.linalg.eigh(T[:m, :m])
        anorm = max(anorm, float(np.abs(vals).max()))
        resid_est = np.abs(beta_m * S[m - 1, :])
        kk = min(k, m)
        theta = vals[:kk]
        ok = resid_est[:kk] <= tol * (np.abs(theta) + anorm)
        if exhausted or bool(np.all(ok)) or applies >= max_iter:
            X = V[:m].T @ S[:, :kk]
            return {"theta": theta.copy(), "X": X, "applies": applies,
                    "est_residuals": (np.zeros(kk) if exhausted
                                      else resid_est[:kk].copy()),
                    "converged": bool(exhausted or np.all(ok)), "anorm": anorm}

        # thick restart: keep the best Ritz vectors plus the Lanczos remainder
        Y = V[:m].T @ S[:, :keep]
        remainder = V[m].copy()
        V[:keep] = Y.T
        if beta_m > 1e-13 * max(anorm, 1.0):
            V[keep] = remainder
        else:
            nxt = fresh_direction(keep)
            if nxt is None:
                X = V[:m].T @ S[:, :kk]
                return {"theta": theta.copy(), "X": X, "applies": applies,
                        "est_residuals": resid_est[:kk].copy(),
                        "converged": False, "anorm": anorm}
            V[keep] = nxt
        T[:, :] = 0.0
        T[:keep, :keep] = np.diag(vals[:keep])
        j_start = keep


def lanczos_lowest(op, k, tol=1e-9, max_iter=10_000, seed=0, subspace=None,
                   start=None):
    """Lowest k eigenpairs of a symmetric operator handle.

    op needs .dim and .apply(vector); deterministic for a fixed seed.
    Residuals of returned pairs are verified with one extra apply each.
    """
    n = int(op.dim)
    out = lanczos_core(op.apply, n, k, tol=tol, max_iter=max_iter, seed=seed,
                       start=start, subspace=subspace)
    X = out["X"]
    theta = out["theta"]
    true_res = np.empty(len(theta))
    for i in range(len(theta)):
        true_res[i] = np.linalg.norm(op.apply(X[:, i]) - theta[i] * X[:, i])
    converged = bool(out["converged"]
                     and np.all(true_res <= tol * (np.abs(theta) + out["anorm"])))
    meta = dict(getattr(op, "meta", {}) or {})
    meta.update({"dim": n, "label": getattr(op, "label", "")})
    return SpectrumReport(theta, true_res, out["applies"], meta, converged,
                          vectors=X, tolerance=float(tol))


def dense_eigs(op, k, cap=DENSE_CAP):
    """Lowest k eigenpairs by full symmetric eigendecomposition.

    op is a DenseOperator-like object (.matrix, .basis) or a plain square
    ndarray.  Dimension above cap raises CapacityError.
    """
    mat = op if isinstance(op, np.ndarray) else op.matrix
    n = mat.shape[0]
    if mat.shape[0] != mat.shape[1]:
        raise ContractViolation("dense_eigs needs a square matrix")
    if n > cap:
        raise CapacityError(f"dense path capped at {cap}, got {n}",
                            requested=n, limit=cap)
    if not 1 <= k <= n:
        raise ContractViolation(f"need 1 <= k <= dim, got k={k}, dim={n}")
    herm_defect = float(np.max(np.abs(mat - mat.conj().T)))
    scale = float(np.max(np.abs(mat)) or 1.0)
    if herm_defect > 1e-12 * scale:
        raise ContractViolation(f"matrix is not hermitian (defect {herm_defect:.2e})")
    vals, vecs = np.linalg.eigh(mat)
    theta = vals[:k]
    X = vecs[:, :k]
    res = np.linalg.norm(mat @ X - X * theta[None, :], axis=0)
    meta = {"dim": n, "label": getattr(op, "label", "dense")}
    return SpectrumReport(np.real(theta), res, n, meta, True, vectors=X,
                          tolerance=0.0)
