import numpy as np
import pytest

from src.errors import SolverError, ValidationError
from src.spectral import candidate_at, find_crossing, necessary_guard, transversality
from src.surrogates import SURROGATE_CASES, make_case, make_normal_form, make_planted_spectrum


def test_planted_crossing_is_located():
    system = make_case('planted')
    candidate = find_crossing(system, (2.0, 4.0), 0.5, 3.0)
    assert candidate.lam_o == pytest.approx(3.0, abs=1e-10)
    assert candidate.zeta0 == pytest.approx(2.0, abs=1e-8)
    assert candidate.re_nu_prime == pytest.approx(0.7, abs=1e-8)
    assert candidate.simplicity['simple']
    assert candidate.nonresonance['passed']
    assert necessary_guard(candidate)['passed']


def test_adjoint_normalization():
    system = make_case('planted')
    candidate = candidate_at(system, 3.0, 0.5, 3.0)
    pencil = system.pencil(3.0)
    assert pencil.inner(candidate.v0_adjoint, candidate.v0) == pytest.approx(1.0 / np.pi, abs=1e-12)


def test_crossing_needs_a_sign_change():
    system = make_case('planted')
    with pytest.raises(SolverError, match='no crossing'):
        find_crossing(system, (3.5, 4.0), 0.5, 3.0)


def test_resonant_case_fails_at_second_harmonic():
    system = make_case('planted-resonance')
    candidate = find_crossing(system, (2.0, 4.0), 0.5, 3.0)
    assert candidate.lam_o == pytest.approx(3.0, abs=1e-10)
    assert not candidate.nonresonance['passed']
    assert candidate.nonresonance['offending_k'] == 2
    guard = necessary_guard(candidate)
    assert not guard['passed']
    assert 'nonresonant' in guard['message']


def test_jordan_block_is_flagged():
    system = make_case('planted-jordan')
    try:
        candidate = candidate_at(system, 3.0, 0.5, 3.0)
    except SolverError as exc:
        assert 'defective pairing' in str(exc)
    else:
        assert not candidate.simplicity['simple']
        assert not necessary_guard(candidate)['passed']


@pytest.mark.parametrize('eigs, slopes, jordan', [
    ([2j, 2j], [1.0, 1.0], False),
    ([2j, -2j], [1.0, 1.0], False),
    ([1.0], [1j], False),
    ([1.0, 2j], [1.0, 1.0], True),
    ([2j], [1.0, 2.0], False),
    ([], [], False),
])
def test_inconsistent_requests(eigs, slopes, jordan):
    with pytest.raises(ValidationError, match='inconsistent request'):
        make_planted_spectrum(eigs, slopes, jordan=jordan)


def test_normal_form_reference_and_nonlinearity():
    system = make_normal_form(-1)
    assert system.reference['mu1'] == 1.0
    x = np.array([0.3, -0.4])
    np.testing.assert_allclose(system.nonlinear(x, 0.0), -0.25 * x)
    np.testing.assert_allclose(system.nonlinear(np.zeros(2), 0.2), 0.0)
    h = 1e-6
    jac = system.nonlinear_jacobian(x, 0.1).toarray()
    fd = np.column_stack([(system.nonlinear(x + h * e, 0.1) - system.nonlinear(x - h * e, 0.1)) / (2 * h)
                          for e in np.eye(2)])
    np.testing.assert_allclose(jac, fd, atol=1e-8)
    with pytest.raises(ValidationError):
        make_normal_form(2)


def test_every_case_builds():
    for name in SURROGATE_CASES:
        system = make_case(name)
        assert system.J0.shape == system.S.shape
    with pytest.raises(ValidationError, match='unknown surrogate case'):
        make_case('lorenz')


def test_transversality_ignores_vector_scaling():
    system = make_case('planted')
    candidate = candidate_at(system, 3.0, 0.5, 3.0)
    pencil, S = system.pencil(3.0), system.parameter_derivative(3.0)
    value = transversality(pencil, S, candidate.v0, candidate.v0_adjoint)
    assert value == pytest.approx(0.7, abs=1e-8)
    assert transversality(pencil, S, (2 - 1j) * candidate.v0, 5j * candidate.v0_adjoint) == pytest.approx(value)


def test_simplicity_tolerance_reaches_the_candidate():
    system = make_case('planted')
    assert candidate_at(system, 3.0, 0.5, 3.0).simplicity['simple']
    # nearest other eigenvalue sits at |0.5 + 1.3i| from 2i
    wide = candidate_at(system, 3.0, 0.5, 3.0, tol_simplicity=2.0)
    assert not wide.simplicity['simple']
    assert not necessary_guard(wide)['passed']
    crossing = find_crossing(system, (2.0, 4.0), 0.5, 3.0, tol_simplicity=2.0)
    assert not crossing.simplicity['simple']
