import numpy as np
import pytest

from toruspolaron.errors import CapacityError, ContractViolation
from toruspolaron.fock import enumerate_sector
from toruspolaron.lattice import (TWO_PI, ModelParams, build_lattice,
                                  dispersion, form_factor)
from toruspolaron.operators import (dgamma_operator, dressed_rhs,
                                    gross_profile_array, hbf_dense,
                                    hbf_operator, load_dense,
                                    pair_sector_lowest, tensor_product_dense,
                                    tensor_total_momenta, weyl_unitary)

LAT6 = build_lattice(TWO_PI)
PAIR_LAT = build_lattice(TWO_PI, _ints=np.array([[-1, 0, 0], [1, 0, 0]]))


def random_vectors(dim, count=20, seed=5):
    return np.random.default_rng(seed).standard_normal((count, dim))


def test_dgamma_number_operator():
    b = enumerate_sector(LAT6, 2)
    num = dgamma_operator(b, np.ones(LAT6.size))
    assert num.diag[0] == 0.0
    two = b.index[(0, 0)]
    assert num.diag[two] == 2.0
    x = np.ones(b.dim)
    assert np.array_equal(num.apply(x), num.diag)


def test_dgamma_epsilon_matches_hbf_diagonal():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.7, a_w=0.0, cutoff=TWO_PI, n_max=2)
    h = hbf_operator(b, params)
    eps_op = dgamma_operator(b, lambda p: dispersion(p, 0.7))
    imp = (TWO_PI * b.impurity_momentum_int().astype(float))
    recoil = (imp * imp).sum(axis=1)
    assert np.allclose(h.diag, recoil + eps_op.diag, rtol=1e-13)


def test_hbf_decoupled_is_diagonal_with_zero_vacuum():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.4, a_w=0.0, cutoff=TWO_PI, n_max=2)
    h = hbf_dense(b, params)
    assert np.allclose(h.matrix, np.diag(np.diag(h.matrix)))
    assert h.matrix[0, 0] == 0.0     # vacuum at zero total momentum


def test_three_level_closed_form():
    # single +-p mode pair, one boson cap: ground state in closed form
    params = ModelParams(a_v=0.3, a_w=0.8, cutoff=TWO_PI, n_max=1)
    b = enumerate_sector(PAIR_LAT, 1)
    assert b.dim == 3
    h = hbf_dense(b, params)
    w = form_factor((TWO_PI, 0, 0), 0.8, 0.3, TWO_PI)
    delta = TWO_PI ** 2 + dispersion((TWO_PI, 0, 0), 0.3)
    exact = 0.5 * (delta - np.sqrt(delta ** 2 + 8 * w * w))
    assert np.linalg.eigvalsh(h.matrix)[0] == pytest.approx(exact, rel=1e-13)


def test_dense_and_matrix_free_agree():
    b = enumerate_sector(LAT6, 3)
    params = ModelParams(a_v=0.2, a_w=1.1, cutoff=TWO_PI, n_max=3)
    h = hbf_operator(b, params)
    dense = hbf_dense(b, params)
    for x in random_vectors(b.dim):
        ref = dense.matrix @ x
        scale = np.max(np.abs(ref)) or 1.0
        assert np.max(np.abs(h.apply(x) - ref)) <= 1e-12 * scale


def test_apply_symmetry_spot_check():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.2, a_w=0.9, cutoff=TWO_PI, n_max=2)
    h = hbf_operator(b, params)
    rng = np.random.default_rng(2)
    for _ in range(10):
        u, v = rng.standard_normal((2, b.dim))
        left = float(u @ h.apply(v))
        right = float(h.apply(u) @ v)
        assert left == pytest.approx(right, rel=1e-12, abs=1e-12)


def test_cutoff_exceeding_lattice_rejected():
    b = enumerate_sector(LAT6, 1)
    with pytest.raises(ContractViolation):
        hbf_operator(b, ModelParams(a_w=1.0, cutoff=3 * TWO_PI, n_max=1))


def test_truncation_monotonicity_in_cap():
    lat = build_lattice(TWO_PI)
    params = dict(a_v=0.3, a_w=1.0, cutoff=TWO_PI)
    prev = None
    for cap in (1, 2, 3):
        b = enumerate_sector(lat, cap)
        e0 = np.linalg.eigvalsh(
            hbf_dense(b, ModelParams(n_max=cap, **params)).matrix)[0]
        if prev is not None:
            assert e0 <= prev + 1e-12
        prev = e0


def test_hermiticity_of_dense_assemblies():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.5, a_w=0.7, cutoff=TWO_PI, kappa=0.0, n_max=2)
    for op in (hbf_dense(b, params), dressed_rhs(b, params)):
        assert op.hermiticity_defect() <= 1e-12 * np.max(np.abs(op.matrix))


def test_weyl_identity_and_unitarity():
    b = enumerate_sector(LAT6, 2)
    assert np.allclose(weyl_unitary(b, np.zeros(6)).matrix, np.eye(b.dim))
    rng = np.random.default_rng(3)
    prof = 0.05 * rng.standard_normal(6)
    prof = 0.5 * (prof + prof[LAT6.negation_index()])   # even profile
    u = weyl_unitary(b, prof)
    assert u.unitarity_defect() <= 1e-9


def test_weyl_shift_property():
    # U* a(g) U = a(g) + <g, f> away from the truncation boundary; the
    # residual is boundary leakage, shrinking like a power of the profile
    from toruspolaron.operators import _creation_matrices
    lat = PAIR_LAT
    b = enumerate_sector(lat, 3)
    ghat = np.array([0.3, -0.2])
    a_g = _creation_matrices(b, ghat).toarray().T     # annihilation part
    low = int(b.offsets[3 - 1])     # states with <= n_max - 1 bosons
    block = slice(0, low)
    resids = []
    for scale in (0.08, 0.02):
        prof = np.array([scale, scale])
        u = weyl_unitary(b, prof).matrix
        shifted = u.T @ a_g @ u
        inner = float(np.dot(ghat, prof))
        resid = (shifted[block, block] - a_g[block, block]
                 - inner * np.eye(low))
        resids.append(np.max(np.abs(resid)))
    assert resids[0] <= 1e-5 and resids[1] <= 1e-7
    # at least cubic suppression in the profile amplitude
    assert resids[1] <= resids[0] * (0.02 / 0.08) ** 3 * 1.5


def test_dressed_rhs_reduces_to_free_when_uncoupled():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.6, a_w=0.0, cutoff=TWO_PI, kappa=0.0, n_max=2)
    rhs = dressed_rhs(b, params)
    free = hbf_dense(b, params)
    assert np.allclose(rhs.matrix, free.matrix, atol=1e-13)


def test_dressed_rhs_empty_window_equals_hamiltonian():
    b = enumerate_sector(LAT6, 2)
    params = ModelParams(a_v=0.6, a_w=0.9, cutoff=TWO_PI, kappa=TWO_PI, n_max=2)
    rhs = dressed_rhs(b, params)
    ham = hbf_dense(b, params)
    assert np.allclose(rhs.matrix, ham.matrix, atol=1e-12)


def test_weyl_conjugation_matches_dressed_rhs():
    lat = build_lattice(TWO_PI)
    params = ModelParams(a_v=1.0, a_w=0.02, cutoff=TWO_PI, kappa=0.0, n_max=3)
    b = enumerate_sector(lat, 3)
    h = hbf_dense(b, params)
    u = weyl_unitary(b, gross_profile_array(lat, params))
    rhs = dressed_rhs(b, params)
    conj = u.matrix.T @ h.matrix @ u.matrix
    interior = int(b.offsets[2])     # drop the top two boson-number shells
    block = slice(0, interior)
    resid = np.max(np.abs(conj[block, block] - rhs.matrix[block, block]))
    assert resid <= 1e-8 * np.max(np.abs(h.matrix))


def test_sector_union_matches_tensor_product():
    params = ModelParams(a_v=0.3, a_w=0.6, cutoff=TWO_PI, n_max=1)
    boson_basis = enumerate_sector(LAT6, 1)
    full = tensor_product_dense(LAT6, boson_basis, params)
    full_spec = np.sort(np.linalg.eigvalsh(full.matrix))
    sector_vals = []
    for p_tot in tensor_total_momenta(LAT6, boson_basis):
        sec = enumerate_sector(LAT6, 1, p_total=p_tot, impurity_ints=LAT6.ints)
        if sec.dim == 0:
            continue
        mat = hbf_dense(sec, ModelParams(a_v=0.3, a_w=0.6, cutoff=TWO_PI,
                                         n_max=1, p_total=p_tot)).matrix
        sector_vals.extend(np.linalg.eigvalsh(mat).tolist())
    assert len(sector_vals) == full.dim
    assert np.max(np.abs(np.sort(sector_vals) - full_spec)) <= 1e-10


def test_relabeling_invariance():
    # permuting the lattice-point ordering is a unitary relabeling
    params = ModelParams(a_v=0.4, a_w=0.8, cutoff=TWO_PI, n_max=2,
                         p_total=(1, 0, 0))
    e_ref = np.linalg.eigvalsh(
        hbf_dense(enumerate_sector(LAT6, 2, p_total=(1, 0, 0)), params).matrix)
    perm = np.random.default_rng(7).permutation(LAT6.size)
    lat_perm = build_lattice(TWO_PI, _ints=LAT6.ints[perm])
    e_perm = np.linalg.eigvalsh(
        hbf_dense(enumerate_sector(lat_perm, 2, p_total=(1, 0, 0)),
                  params).matrix)
    assert np.max(np.abs(e_ref - e_perm)) <= 1e-10


def test_pair_solver_matches_dense():
    lat = build_lattice(np.sqrt(2) * TWO_PI)
    params = ModelParams(a_v=0.25, a_w=0.9, cutoff=lat.cutoff_radius,
                         kappa=0.0, n_max=2)
    dense_vals = np.linalg.eigvalsh(
        hbf_dense(enumerate_sector(lat, 2), params).matrix)[:4]
    vals, info = pair_sector_lowest(lat, params, k=4, tol=1e-10)
    assert np.max(np.abs(vals - dense_vals)) <= 1e-8
    assert info["d2_min"] > vals[-1]


def test_pair_solver_nonzero_total_momentum():
    lat = build_lattice(np.sqrt(2) * TWO_PI)
    params = ModelParams(a_v=0.25, a_w=0.9, cutoff=lat.cutoff_radius,
                         kappa=0.0, n_max=2, p_total=(1, 0, 0))
    dense_vals = np.linalg.eigvalsh(
        hbf_dense(enumerate_sector(lat, 2, p_total=(1, 0, 0)), params).matrix)[:2]
    vals, _ = pair_sector_lowest(lat, params, k=2, tol=1e-10)
    assert np.max(np.abs(vals - dense_vals)) <= 1e-8


def test_dense_dump_roundtrip(tmp_path):
    b = enumerate_sector(LAT6, 1)
    params = ModelParams(a_v=0.3, a_w=0.6, cutoff=TWO_PI, n_max=1)
    op = hbf_dense(b, params)
    path = tmp_path / "op.bin"
    op.save(path)
    again = load_dense(path)
    assert np.array_equal(again.matrix, op.matrix)


def test_weyl_capacity_error():
    lat = build_lattice(2 * TWO_PI)
    b = enumerate_sector(lat, 3)
    if b.dim > 4000:
        with pytest.raises(CapacityError):
            weyl_unitary(b, np.zeros(lat.size))
    else:
        pytest.skip("basis unexpectedly small")
