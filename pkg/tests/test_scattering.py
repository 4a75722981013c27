import numpy as np
import pytest

from toruspolaron.errors import AccuracyError, ContractViolation
from toruspolaron.lattice import TWO_PI, build_lattice
from toruspolaron.scattering import (DIRECT_CONV_THRESHOLD, PotentialSpec,
                                     _ConvolutionEngine,
                                     free_space_scattering_length,
                                     load_tabulated_potential, rate_fit,
                                     sobolev_norm, solve_torus_scattering,
                                     torus_scattering_length,
                                     truncate_solution)

GAUSS = PotentialSpec("gaussian", amplitude=1.0, range=0.6)


def small_solution(amplitude=1.0, n=6, tol=1e-11):
    pot = PotentialSpec("gaussian", amplitude=amplitude, range=0.6).scaled(n)
    lat = build_lattice(5.0 * n)
    return solve_torus_scattering(pot, lat, tol=tol), pot, lat


def test_zero_potential_gives_zero_solution():
    pot = PotentialSpec("gaussian", amplitude=0.0, range=0.5)
    lat = build_lattice(2 * TWO_PI)
    sol = solve_torus_scattering(pot, lat)
    assert np.all(sol.phi_hat == 0.0)
    assert sol.torus_length == 0.0


def test_born_oracle_small_amplitude():
    # phi ~ -vhat/(2 p^2) at first order in the amplitude
    sol, pot, lat = small_solution(amplitude=1e-3, n=4)
    born = -pot.fourier_on_lattice(lat) / (2.0 * lat.norm_sq)
    scale = np.max(np.abs(born))
    assert np.max(np.abs(sol.phi_hat - born)) <= 1e-2 * scale


def test_substitution_residual_is_defining_property():
    sol, pot, lat = small_solution()
    vhat = pot.fourier_on_lattice(lat)
    engine = _ConvolutionEngine(pot, lat)
    resid = lat.norm_sq * sol.phi_hat + 0.5 * engine.apply(sol.phi_hat) + 0.5 * vhat
    assert np.linalg.norm(resid) <= 1e-11 * np.linalg.norm(vhat)


def test_phi_even():
    sol, _, lat = small_solution()
    neg = lat.negation_index()
    assert np.max(np.abs(sol.phi_hat - sol.phi_hat[neg])) <= 1e-10


def test_quadratic_form_identity():
    # <phi, p^2 phi> + <phi, v(1+phi)>/2 = -<v, phi>/2 at the solution
    sol, pot, lat = small_solution()
    vhat = pot.fourier_on_lattice(lat)
    engine = _ConvolutionEngine(pot, lat)
    conv = engine.apply(sol.phi_hat)
    lhs = float(np.sum(lat.norm_sq * sol.phi_hat ** 2)
                + 0.5 * np.dot(sol.phi_hat, conv)
                + 0.5 * np.dot(sol.phi_hat, vhat))
    rhs = -0.5 * float(np.dot(vhat, sol.phi_hat))
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(rhs)))


def test_pointwise_decay_bound():
    sol, _, _ = small_solution()
    fitted = sol.sup_p2_phi_hat()
    assert np.all(np.abs(sol.phi_hat) * sol.lattice.norm_sq <= fitted + 1e-12)
    assert fitted > 0


def test_conv_paths_agree():
    pot = GAUSS.scaled(8)
    lat = build_lattice(5.0 * 8)
    assert lat.size <= DIRECT_CONV_THRESHOLD or lat.size > 0
    eng = _ConvolutionEngine(pot, lat)
    x = np.random.default_rng(0).standard_normal(lat.size)
    direct = eng._apply_direct(x)
    eng.direct = False
    eng._setup_fft()
    fft = eng._apply_fft(x)
    assert np.max(np.abs(direct - fft)) <= 1e-10 * np.max(np.abs(direct))


def test_torus_length_first_order():
    sol, pot, lat = small_solution(amplitude=1e-4, n=4)
    a = torus_scattering_length(sol, coupling_scale=1.0)
    born = float(np.asarray(pot.fourier_abs_k(0.0))) / (8 * np.pi)
    assert a == pytest.approx(born, rel=2e-3)
    assert a > 0
    assert torus_scattering_length(sol, coupling_scale=3.0) == pytest.approx(
        3 * a, rel=1e-12)


def test_scaled_family_approaches_free_length():
    a_free = free_space_scattering_length(GAUSS, grid_points=2500)
    diffs = []
    for n in (8, 16, 32):
        lat = build_lattice(5.0 * n)
        sol = solve_torus_scattering(GAUSS.scaled(n), lat, tol=1e-10)
        diffs.append((n, abs(n * sol.torus_length - a_free)))
    assert diffs[1][1] < diffs[0][1] and diffs[2][1] < diffs[1][1]
    exponent, _ = rate_fit(diffs)
    assert -1.3 <= exponent <= -0.7


def test_truncation_monotone_and_trivial():
    sol, _, lat = small_solution()
    same = truncate_solution(sol, 0.0)
    assert np.array_equal(same.phi_hat, sol.phi_hat)
    gone = truncate_solution(sol, lat.cutoff_radius + 1.0)
    assert np.all(gone.phi_hat == 0.0)
    norms = [np.linalg.norm(truncate_solution(sol, m * TWO_PI).phi_hat)
             for m in (0, 1, 2, 3, 4)]
    assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))


def test_truncation_norm_decay_rate():
    # ||phi_m||_2 ~ m^(-1/2) for the scaled family
    sol, _, _ = small_solution(amplitude=2.0, n=8)
    pairs = [(m, np.linalg.norm(truncate_solution(sol, m * TWO_PI).phi_hat))
             for m in (2, 4, 8, 16)]
    exponent, _ = rate_fit(pairs)
    assert -1.1 <= exponent <= -0.25


def test_sobolev_norms():
    sol, _, lat = small_solution()
    assert sobolev_norm(sol, 0.0) == pytest.approx(np.linalg.norm(sol.phi_hat))
    grad = np.sqrt(np.sum(lat.norm_sq * sol.phi_hat ** 2))
    assert sobolev_norm(sol, 1.0) == pytest.approx(grad, rel=1e-13)
    with pytest.raises(ContractViolation):
        sobolev_norm(sol, 2.5)
    zero = truncate_solution(sol, lat.cutoff_radius + 1)
    assert sobolev_norm(zero, 0.5) == 0.0


def test_half_gradient_norm_grows_like_log():
    vals = []
    for n in (8, 16, 32):
        lat = build_lattice(5.0 * n)
        sol = solve_torus_scattering(GAUSS.scaled(n), lat, tol=1e-10)
        trunc = truncate_solution(sol, 0.25 * 5.0 * n)
        vals.append((np.log(n), (n * sobolev_norm(trunc, 0.5)) ** 2))
    slopes = np.diff([v for _, v in vals]) / np.diff([x for x, _ in vals])
    # slope of the squared half-gradient norm versus log n stabilizes
    assert abs(slopes[1] - slopes[0]) <= 0.35 * abs(slopes[0])


def test_free_space_zero_and_born():
    assert free_space_scattering_length(
        PotentialSpec("gaussian", amplitude=0.0, range=0.5), 500) == 0.0
    weak = PotentialSpec("gaussian", amplitude=1e-4, range=0.5)
    a = free_space_scattering_length(weak, 2000)
    born = float(np.asarray(weak.fourier_abs_k(0.0))) / (8 * np.pi)
    assert a == pytest.approx(born, rel=2e-3)


def test_hard_sphere_limit():
    R = 0.3
    prev = None
    for amp in (100.0, 1000.0, 10000.0):
        ball = PotentialSpec("compact_bump", amplitude=amp, range=R)
        K = np.sqrt(amp / 2.0)
        exact = R - np.tanh(K * R) / K
        a = free_space_scattering_length(ball, 6000, tol=1e-3)
        assert a == pytest.approx(exact, rel=5e-3)
        assert a < R
        if prev is not None:
            assert a > prev
        prev = a


def test_free_space_scaling_relation():
    a1 = free_space_scattering_length(GAUSS, 3000)
    a4 = free_space_scattering_length(GAUSS.scaled(4), 3000)
    assert a4 == pytest.approx(a1 / 4.0, rel=1e-6)


def test_free_space_accuracy_error_on_coarse_grid():
    ball = PotentialSpec("compact_bump", amplitude=5000.0, range=0.3)
    with pytest.raises(AccuracyError):
        free_space_scattering_length(ball, 40, tol=1e-12)


def test_rate_fit_examples():
    n = [2, 4, 8, 16]
    exponent, constant = rate_fit([(x, 5.0 / x) for x in n])
    assert exponent == pytest.approx(-1.0, abs=1e-12)
    assert constant == pytest.approx(5.0, rel=1e-12)
    exponent, constant = rate_fit([(x, 3.0) for x in n])
    assert exponent == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractViolation):
        rate_fit([(1, 1.0), (2, 0.5)])
    with pytest.raises(ContractViolation):
        rate_fit([(1, 1.0), (2, -0.5), (3, 1.0)])


def test_tabulated_potential_roundtrip(tmp_path):
    r = np.linspace(1e-3, 0.5, 400)
    v = 2.0 * np.exp(-0.5 * (r / 0.1) ** 2)
    path = tmp_path / "pot.txt"
    with open(path, "w") as fh:
        fh.write("# radius value\n")
        for ri, vi in zip(r, v):
            fh.write(f"{ri} {vi}\n")
    pot = load_tabulated_potential(path)
    ref = PotentialSpec("gaussian", amplitude=2.0, range=0.1)
    for k in (0.0, 3.0, 11.0):
        assert float(np.asarray(pot.fourier_abs_k(k))) == pytest.approx(
            float(np.asarray(ref.fourier_abs_k(k))), rel=2e-3, abs=1e-6)


def test_negative_tabulated_rejected(tmp_path):
    path = tmp_path / "bad.txt"
    with open(path, "w") as fh:
        for ri, vi in [(0.1, 1.0), (0.2, -1.0), (0.3, 0.5), (0.4, 0.1)]:
            fh.write(f"{ri} {vi}\n")
    with pytest.raises(ContractViolation):
        load_tabulated_potential(path)
