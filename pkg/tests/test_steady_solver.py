import numpy as np
import pytest

from src.errors import SolverError, ValidationError
from src.steady_solver import SteadySolver, branch_derivative, chi_from_traction, continue_in_lambda, solve_steady


@pytest.fixture(scope='module')
def solver(space, ops):
    return SteadySolver(space, ops)


def test_stokes_limit_converges_in_one_step(solver):
    state = solve_steady(solver, 0.0)
    assert state.newton_iterations <= 1
    assert state.residual_norm < 1e-10


def test_body_velocity_and_incompressibility(solver, space, ops):
    state = solve_steady(solver, 3.0)
    comps = space.components(state.velocity)
    np.testing.assert_allclose(comps[0][space.body_dofs], 1.0)
    np.testing.assert_allclose(comps[1][space.body_dofs], 0.0)
    assert np.abs(ops.divergence @ state.velocity).max() < 1e-9


def test_jacobian_matches_difference_quotient(solver, space, rng):
    u = solver.boundary_lift() + 0.1 * rng.standard_normal(solver.nu)
    p = rng.standard_normal(space.Np)
    du = rng.standard_normal(solver.nu)
    dp = rng.standard_normal(space.Np)
    h = 1e-4
    fd = (solver.residual(u + h * du, p + h * dp, 4.0) - solver.residual(u - h * du, p - h * dp, 4.0)) / (2 * h)
    J = solver.jacobian(u, 4.0)
    np.testing.assert_allclose(J @ np.concatenate([du, dp]), fd, rtol=1e-7, atol=1e-9 * np.abs(fd).max())


def test_continuation_returns_one_state_per_target(solver):
    states = continue_in_lambda(solver, [0.0, 2.0, 5.0])
    assert [s.lam for s in states] == [0.0, 2.0, 5.0]
    assert all(s.residual_norm < 1e-10 for s in states)


def test_continuation_requires_ascending_targets(solver):
    with pytest.raises(ValidationError, match='ascending'):
        continue_in_lambda(solver, [5.0, 2.0])


def test_negative_lambda_rejected(solver):
    with pytest.raises(ValidationError, match='lambda negative'):
        solver.newton(-1.0)


def test_newton_divergence_is_reported(space, ops):
    impatient = SteadySolver(space, ops, max_iter=1)
    with pytest.raises(SolverError, match='continuation in lambda'):
        impatient.newton(20.0)


def test_branch_derivative_matches_finite_differences(solver, space):
    lam, h = 4.0, 1e-3
    base = solve_steady(solver, lam)
    up = solve_steady(solver, lam + h, base)
    down = solve_steady(solver, lam - h, base)
    deriv = branch_derivative(solver, base)
    fd = (up.velocity - down.velocity) / (2 * h)
    assert np.linalg.norm(deriv.velocity - fd) <= 1e-4 * np.linalg.norm(fd)
    fd_chi = (up.chi0 - down.chi0) / (2 * h)
    np.testing.assert_allclose(deriv.chi0, fd_chi, rtol=1e-3, atol=1e-6)


def test_displacement_balances_traction(solver, model):
    state = solve_steady(solver, 2.0)
    np.testing.assert_allclose(model.A @ state.chi0, -model.varpi * state.traction, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(chi_from_traction(model, state.traction), state.chi0)
