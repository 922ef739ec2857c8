import numpy as np
import pytest
from skfem import Functional, asm

from src.errors import ValidationError
from src.linear_operators import (adjoint, assemble_Khat, assemble_L0, assemble_L2, assemble_S011,
                                  coupled_inner_product, dump_operator, leray_project, random_solenoidal,
                                  resolvent_ratio)

LAM = 5.0


@pytest.fixture(scope='module')
def state(problem):
    return problem.steady(LAM)


def _advect(w, a, b, c, d):
    """(a . grad b) . c at quadrature points"""
    return sum(w[f'{a}{i}'].value * w[f'{b}{j}'].grad[i] * w[f'{c}{j}'].value
               for i in range(d) for j in range(d))


@Functional
def _skew_linearization(w):
    d = w.x.shape[0]
    first = 0.5 * (_advect(w, 'U', 'W', 'F', d) - _advect(w, 'U', 'F', 'W', d))
    second = 0.5 * (_advect(w, 'R', 'U', 'F', d) - _advect(w, 'R', 'F', 'U', d))
    return first + second


def test_L0_energy_is_twice_strain(ops, model, rng):
    L0 = assemble_L0(model, ops)
    for _ in range(5):
        x = rng.standard_normal(ops.space.n)
        energy = x @ (L0.matrix @ x)
        assert energy == pytest.approx(2.0 * ops.strain_energy(ops.space.field(x)), rel=1e-10)


def test_adjoint_defining_property(ops, model, state, rng):
    L = assemble_L2(model, state, ops)
    Lstar = adjoint(L)
    x = rng.standard_normal(ops.space.n) + 1j * rng.standard_normal(ops.space.n)
    y = rng.standard_normal(ops.space.n) + 1j * rng.standard_normal(ops.space.n)
    lhs = coupled_inner_product(ops, L.apply(x), y)
    rhs = coupled_inner_product(ops, x, Lstar.apply(y))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_khat_matches_independent_quadrature(ops, model, state, rng):
    s = ops.space
    P, Pc = s.prolongation, s.constant_extension
    x = rng.standard_normal(s.n)
    y = rng.standard_normal(s.n)
    K = assemble_Khat(state, model, ops)
    kw = {}
    kw.update(s.interpolate(state.velocity, prefix='U'))
    kw.update(s.interpolate(P @ x, prefix='W'))
    kw.update(s.interpolate((P - Pc) @ x, prefix='R'))
    kw.update(s.interpolate(P @ y, prefix='F'))
    expected = model.lam * asm(_skew_linearization, s.ubasis, **kw)
    assert y @ (K.matrix @ x) == pytest.approx(expected, rel=1e-10)


def test_khat_rejects_mismatched_lambda(ops, model, state):
    with pytest.raises(ValidationError, match='parameter mismatch'):
        assemble_Khat(state, model.with_lambda(LAM + 1.0), ops)


def test_sum_of_operators_at_different_lambda(ops, model):
    with pytest.raises(ValidationError, match='parameter mismatch'):
        assemble_L0(model, ops) + assemble_L0(model.with_lambda(LAM + 1.0), ops)


def test_S011_is_lambda_derivative_of_L2(problem, model, rng):
    h = 1e-3
    x = rng.standard_normal(problem.space.n)
    S = assemble_S011(problem.steady(LAM), problem.derivative(LAM), model, problem.ops)
    fd = (problem.weak_operator(LAM + h) @ x - problem.weak_operator(LAM - h) @ x) / (2 * h)
    assert np.linalg.norm(S.matrix @ x - fd) <= 1e-4 * np.linalg.norm(fd)


def test_leray_projection(ops, rng):
    x = rng.standard_normal(ops.space.n)
    y = leray_project(ops, x)
    assert np.abs(ops.Cx @ y).max() < 1e-10 * max(1.0, np.abs(y).max())
    np.testing.assert_allclose(leray_project(ops, y), y, atol=1e-10 * np.abs(y).max())
    # the defect is Gram-orthogonal to solenoidal fields
    z = random_solenoidal(ops, rng)
    assert abs(ops.inner(z, x - y)) < 1e-9 * np.sqrt(abs(ops.inner(x, x) * ops.inner(z, z)))


def test_resolvent_ratio_finite(ops, model, rng):
    L0 = assemble_L0(model, ops)
    f = rng.standard_normal(ops.space.n)
    ratios = [resolvent_ratio(L0, zeta, f) for zeta in (1.0, 4.0)]
    assert all(np.isfinite(r) and r > 0 for r in ratios)


def test_dump_operator_format(ops, model, tmp_path):
    L0 = assemble_L0(model, ops)
    path = dump_operator(L0, str(tmp_path / 'L0.txt'))
    lines = open(path).read().splitlines()
    kind, rows, cols, nnz = lines[0].split()[1:]
    assert kind == 'L0'
    assert int(rows) == int(cols) == ops.space.n
    assert len(lines) == int(nnz) + 1
