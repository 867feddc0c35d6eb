import math

import numpy as np
import pytest

from spdefem import (
    ContractionError,
    Domain,
    NoiseSample,
    Nonlinearity,
    PowerLaw,
    SolveError,
    assemble,
    build_basis,
    build_mesh,
    contraction_estimate,
    l2_error,
    noise_load_matrix,
    sample_projected_noise,
    solve_fem,
    solve_spectral,
)

PI2 = math.pi**2


@pytest.fixture(scope="module")
def basis():
    return build_basis(Domain(1), 64)


def unit_mode_sample(n):
    coeffs = np.zeros(n)
    coeffs[0] = 1.0
    return NoiseSample(n=n, coeffs=coeffs, seed=None, eta=np.zeros(n))


def test_spectral_zero_f_inverts_modewise(basis):
    sol = solve_spectral(basis, 8, Nonlinearity.zero(), unit_mode_sample(8))
    assert sol.coeffs[0] == pytest.approx(1 / PI2, rel=1e-15)
    assert np.all(sol.coeffs[1:] == 0.0)
    assert sol.closed_form and sol.iterations == 0


def test_spectral_linear_resolvent(basis):
    sol = solve_spectral(basis, 8, Nonlinearity.linear(1.0), unit_mode_sample(8))
    assert sol.coeffs[0] == pytest.approx(1 / (PI2 - 1), rel=1e-15)


def test_spectral_picard_contraction_bound(basis):
    s = sample_projected_noise(PowerLaw(0.0), basis, 32, seed=2024)
    sol = solve_spectral(basis, 32, Nonlinearity.scaled_sin(5.0), s)
    assert sol.residual <= 2e-11
    assert contraction_estimate(sol) <= 5 / PI2 + 0.02
    assert sol.iterations >= 3


def test_spectral_defect_checked_independently(basis):
    # recompute the fixed-point defect on a finer grid than the solver uses
    n = 16
    f = Nonlinearity.scaled_sin(3.0)
    s = sample_projected_noise(PowerLaw(0.0), basis, n, seed=5)
    tol = 1e-12
    sol = solve_spectral(basis, n, f, s, tol=tol)
    grid = np.arange(1, 32 * n) / (32 * n)
    modes = basis.mode_values(grid, n)
    proj = (modes.T @ f(modes @ sol.coeffs)) / (32 * n)
    defect = np.linalg.norm((proj + s.coeffs[:n]) / basis.lambdas[:n] - sol.coeffs)
    assert defect <= 2 * tol


def test_solvers_refuse_supercritical_lipschitz(basis):
    s = sample_projected_noise(PowerLaw(0.0), basis, 8, seed=0)
    with pytest.raises(ContractionError):
        solve_spectral(basis, 8, Nonlinearity.scaled_sin(10.0), s)
    sys_ = assemble(build_mesh(Domain(1), 8)).with_noise_load(np.zeros(7))
    with pytest.raises(ContractionError):
        solve_fem(sys_, Nonlinearity.scaled_tanh(10.0))


def test_spectral_max_iter_exceeded(basis):
    s = sample_projected_noise(PowerLaw(0.0), basis, 16, seed=1)
    with pytest.raises(SolveError, match="Picard"):
        solve_spectral(basis, 16, Nonlinearity.scaled_sin(9.8), s, max_iter=50)


def test_spectral_2d_nonlinear_unsupported():
    basis2 = build_basis(Domain(2), 8)
    s = sample_projected_noise(PowerLaw(0.0), basis2, 8, seed=0)
    with pytest.raises(ValueError, match="1D"):
        solve_spectral(basis2, 8, Nonlinearity.scaled_sin(1.0), s)
    # closed forms still fine in 2D
    sol = solve_spectral(basis2, 8, Nonlinearity.zero(), s)
    assert sol.coeffs == pytest.approx(s.coeffs / basis2.lambdas[:8])


def test_contraction_estimate_conventions(basis):
    sol = solve_spectral(basis, 4, Nonlinearity.zero(), unit_mode_sample(4))
    assert contraction_estimate(sol) == 0.0
    sol = solve_spectral(basis, 4, Nonlinearity.linear(2.0), unit_mode_sample(4))
    assert contraction_estimate(sol) == 0.0

    class Fake:
        closed_form = False
        increments = (1.0, 0.5)

    with pytest.raises(ValueError):
        contraction_estimate(Fake())


def test_fem_zero_load_zero_solution():
    sys_ = assemble(build_mesh(Domain(1), 8)).with_noise_load(np.zeros(7))
    sol = solve_fem(sys_, Nonlinearity.zero())
    assert np.all(sol.function.values == 0.0)


def test_fem_single_mode_order_two(basis):
    errs = []
    for n in (16, 32, 64, 128):
        mesh = build_mesh(Domain(1), n)
        sys_ = assemble(mesh)
        b = noise_load_matrix(mesh, basis, 1) @ np.array([1.0])
        sol = solve_fem(sys_.with_noise_load(b), Nonlinearity.zero())
        errs.append(l2_error(sol.function, basis, np.array([1 / PI2])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9) and np.all(orders < 2.1)


def test_fem_linear_matches_resolvent(basis):
    errs = []
    exact = np.array([1 / (PI2 - 1)])
    for n in (16, 32, 64, 128):
        mesh = build_mesh(Domain(1), n)
        b = noise_load_matrix(mesh, basis, 1) @ np.array([1.0])
        sol = solve_fem(assemble(mesh).with_noise_load(b), Nonlinearity.linear(1.0))
        errs.append(l2_error(sol.function, basis, exact))
    errs = np.array(errs)
    assert np.all(np.diff(errs) < 0)
    orders = np.log2(errs[:-1] / errs[1:])
    assert np.all(orders > 1.9) and np.all(orders < 2.1)


def test_fem_picard_contraction_and_residual(basis):
    mesh = build_mesh(Domain(1), 64)
    sys_ = assemble(mesh)
    s = sample_projected_noise(PowerLaw(0.0), basis, 32, seed=11)
    b = noise_load_matrix(mesh, basis, 32) @ s.coeffs
    sol = solve_fem(sys_.with_noise_load(b), Nonlinearity.scaled_tanh(4.0))
    assert contraction_estimate(sol) <= 4 / PI2 + 0.02
    assert sol.residual <= 2e-11
    # independent defect: reapply the map once
    from spdefem.fem import solve_spd

    u = sol.function.values[mesh.interior]
    again = solve_spd(sys_.stiffness, sys_.mass @ (4.0 * np.tanh(u)) + b, x0=u)
    d = again - u
    assert math.sqrt(d @ (sys_.mass @ d)) <= 2e-11


def test_fem_requires_noise_load():
    sys_ = assemble(build_mesh(Domain(1), 8))
    with pytest.raises(ValueError, match="noise load"):
        solve_fem(sys_, Nonlinearity.zero())


def test_solutions_deterministic(basis):
    mesh = build_mesh(Domain(1), 32)
    sys_ = assemble(mesh)
    s = sample_projected_noise(PowerLaw(0.0), basis, 16, seed=3)
    b = noise_load_matrix(mesh, basis, 16) @ s.coeffs
    a = solve_fem(sys_.with_noise_load(b), Nonlinearity.scaled_sin(2.0))
    c = solve_fem(sys_.with_noise_load(b), Nonlinearity.scaled_sin(2.0))
    assert np.array_equal(a.function.values, c.function.values)
    sa = solve_spectral(basis, 16, Nonlinearity.scaled_sin(2.0), s)
    sb = solve_spectral(basis, 16, Nonlinearity.scaled_sin(2.0), s)
    assert np.array_equal(sa.coeffs, sb.coeffs)


def test_nonlinearity_validation():
    with pytest.raises(ValueError):
        Nonlinearity("cubic", 1.0)
    f = Nonlinearity.scaled_sin(-3.0)
    assert f.lip == 3.0
    assert Nonlinearity.zero().lip == 0.0
