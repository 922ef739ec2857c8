import numpy as np
import pytest

from src.errors import ValidationError
from src.periodic_modes import (ModeSolver, assemble_K_matrix, assemble_M, energy_identity_report, forced_response,
                                full_linear_tp_solve, growth_report, resonance_scan)

ZETA0 = 0.5
LAM_O = 2.0
A_RESONANT = np.diag([1.0, 4.0])


@pytest.fixture(scope='module')
def solver(ops):
    return ModeSolver(ops, ZETA0, LAM_O)


def test_mode_has_rigid_body_trace(solver, space, ops):
    for m in range(space.d):
        mode = solver.solve_mode(1, m)
        assert mode.residual < 1e-10
        comps = space.components(mode.h)
        for a in range(space.d):
            expected = ZETA0 if a == m else 0.0
            np.testing.assert_allclose(comps[a][space.body_dofs], expected, atol=1e-12)
        assert np.abs(ops.divergence @ mode.h).max() < 1e-9


def test_negative_wavenumber_is_the_conjugate(solver):
    plus, minus = solver.solve_mode(2, 1), solver.solve_mode(-2, 1)
    np.testing.assert_allclose(minus.h, np.conj(plus.h))
    np.testing.assert_allclose(solver.K_matrix(-2).entries, np.conj(solver.K_matrix(2).entries))
    assert solver.solve_mode(0, 0).residual == 0.0


def test_K_is_nonsingular(solver):
    for k in (1, 2, 3):
        assert assemble_K_matrix(solver, k).min_singular_value > 1e-6
    with pytest.raises(ValidationError):
        solver.K_matrix(0)


def test_energy_identity(solver, rng):
    alphas = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    report = energy_identity_report(solver, 1, alphas, varpi=0.3, A=A_RESONANT)
    assert report['zeta_power'] == 1
    assert report['c_D'] == pytest.approx(2.0, rel=1e-6)
    assert report['c_D_is_two']
    assert report['mismatch'] < 1e-8
    assert report['skew_defect'] < 1e-10
    assert report['forced_identity']['mismatch'] < 1e-8


def test_resonance_scan_slope(solver):
    grid = np.logspace(-4, -2, 5)
    result = resonance_scan(solver, grid, A_RESONANT, np.array([1.0, 0.0]), kmax=4)
    assert result['kbar'] == 2
    assert result['exact_resonance']
    assert result['slope'] == pytest.approx(-1.0, abs=0.02)
    assert all(value > 0 for value in result['min_singular_values'].values())


def test_M_matrix_definition(solver):
    K = solver.K_matrix(1)
    M = assemble_M(1, ZETA0, A_RESONANT, 0.2, K)
    expected = A_RESONANT - ZETA0 ** 2 * np.eye(2) + 0.2j * K.entries
    np.testing.assert_allclose(M.entries, expected)
    assert M.condition_number >= 1.0


def test_forced_response_solves_M(solver):
    F = {1: np.array([1.0, 0.5j]), -1: np.array([1.0, -0.5j])}
    response = forced_response(solver, F, A_RESONANT, 0.3, kmax=2)
    assert response.residuals[1] < 1e-12
    np.testing.assert_allclose(response.coefficient('xi', -1), np.conj(response.xi[1]))
    np.testing.assert_allclose(response.xi[2], 0.0)
    np.testing.assert_allclose(response.coefficient('w', 0), 0.0)


def test_forcing_must_have_zero_average(solver):
    with pytest.raises(ValidationError, match='forcing must have zero average'):
        forced_response(solver, {0: np.array([1.0, 0.0]), 1: np.array([1.0, 0.0])}, A_RESONANT, 0.3, kmax=1)
    with pytest.raises(ValidationError, match='conjugate-symmetric'):
        forced_response(solver, {1: np.array([1.0, 0.0]), -1: np.array([2.0, 0.0])}, A_RESONANT, 0.3, kmax=1)


def test_full_periodic_solve_matches_forced_response(solver, space, rng):
    F = {1: np.array([0.3 + 0.1j, -0.2j])}
    forced = forced_response(solver, F, A_RESONANT, 0.3, kmax=1)
    full = full_linear_tp_solve(solver, None, F, None, A_RESONANT, 0.3, kmax=1)
    np.testing.assert_allclose(full.xi[1], forced.xi[1], atol=1e-10)

    nu = solver.nu
    f = {1: rng.standard_normal(nu) + 1j * rng.standard_normal(nu)}
    G = {2: np.array([0.1, -0.05j])}
    result = full_linear_tp_solve(solver, f, F, G, A_RESONANT, 0.3, kmax=2)
    assert max(result.residuals.values()) < 1e-9


def test_growth_ratios_are_finite(solver):
    report = growth_report(solver, [1, 2, 4])
    assert np.all(np.isfinite(report['grad_ratio']))
    assert report['grad_spread'] >= 1.0
    assert report['hess_spread'] >= 1.0


def test_zero_frequency_is_rejected(ops):
    with pytest.raises(ValidationError):
        ModeSolver(ops, 0.0, LAM_O)
