import numpy as np
import pytest

from src.errors import SolverError, ValidationError
from src.hopf_engine import (HarmonicGrid, HopfEngine, OscBasis, PeriodicBranchPoint, build_bases,
                             classify_criticality, continue_branch, evaluate_N, floquet_null_space,
                             newton_branch_point, parity_defect, phase_normalize, phase_shift, side_values,
                             synthesize, verify_system)
from src.spectral import candidate_at
from src.surrogates import SurrogateSystem, make_case, make_normal_form

EPS_GRID = np.linspace(-0.1, 0.1, 9)


def _basis(system, lam=None, zeta_max=3.0):
    lam = system.lam_c if lam is None else lam
    return build_bases(candidate_at(system, lam, 0.5, zeta_max), system.gram)


@pytest.fixture(scope='module')
def supercritical():
    system = make_normal_form(-1)
    return system, _basis(system)


def _point(eps, mu, zeta=1.0):
    return PeriodicBranchPoint(eps, mu, zeta, np.zeros((3, 2)), np.zeros((3, 0)), 0.0, 0)


def test_harmonic_grid_projects_exactly():
    grid = HarmonicGrid(3)
    assert grid.Nt == 12
    np.testing.assert_allclose(grid.analysis @ grid.synthesis, np.eye(grid.R), atol=1e-13)
    with pytest.raises(ValidationError):
        HarmonicGrid(0)


def test_basis_relations(supercritical):
    system, basis = supercritical
    relations = basis.biorthogonality(system.gram)
    assert relations['v1_v1adj'] == pytest.approx(1.0, abs=1e-10)
    assert relations['v2_v2adj'] == pytest.approx(1.0, abs=1e-10)
    assert relations['v1_v2adj'] == pytest.approx(0.0, abs=1e-10)
    assert relations['v1tau_v2adj'] == pytest.approx(1.0, abs=1e-10)
    assert np.vdot(basis.v0, basis.v0).real == pytest.approx(2.0)


def test_biorthogonality_defect_stops_the_engine(monkeypatch):
    system = make_normal_form(-1)
    candidate = candidate_at(system, system.lam_c, 0.5, 3.0)
    skewed = {'v1_v1adj': 1.0, 'v2_v2adj': 1.0, 'v2_v1adj': 0.0, 'v1_v2adj': 1e-3,
              'v1tau_v1adj': 0.0, 'v1tau_v2adj': 1.0}
    monkeypatch.setattr(OscBasis, 'biorthogonality', lambda self, G: skewed)
    with pytest.raises(SolverError, match='biorthogonality defect'):
        build_bases(candidate, system.gram)


@pytest.mark.parametrize('sign, mu1', [(-1, 1.0), (1, -1.0)])
def test_normal_form_branch(sign, mu1):
    system = make_normal_form(sign)
    branch = continue_branch(system, _basis(system), EPS_GRID)
    assert len(branch) == len(EPS_GRID)
    for p in branch:
        assert p.mu == pytest.approx(mu1 * p.epsilon ** 2, abs=1e-8)
        assert p.zeta == pytest.approx(1.0, abs=1e-8)
        assert p.side_conditions[0] == pytest.approx(p.epsilon, abs=1e-10)
        assert p.side_conditions[1] == pytest.approx(0.0, abs=1e-10)
    result = classify_criticality(branch)
    assert result['classification'] == ('supercritical' if sign < 0 else 'subcritical')
    assert result['mu1'] == pytest.approx(mu1, abs=1e-6)


def test_degenerate_normal_form():
    system = make_normal_form(0)
    branch = continue_branch(system, _basis(system), EPS_GRID)
    assert all(abs(p.mu) < 1e-10 for p in branch)
    assert classify_criticality(branch)['classification'] == 'degenerate'


def test_origin_is_the_linear_mode(supercritical):
    system, basis = supercritical
    point = newton_branch_point(system, basis, 0.0)
    assert point.mu == pytest.approx(0.0, abs=1e-12)
    assert point.zeta == pytest.approx(basis.zeta0, abs=1e-12)
    np.testing.assert_allclose(point.X[1:3], basis.v1, atol=1e-10)


def test_planted_branch_parity():
    system = make_case('planted')
    branch = continue_branch(system, _basis(system), np.linspace(-0.05, 0.05, 7))
    parity = parity_defect(branch)
    assert parity['zeta'] < 1e-8
    assert parity['mu'] < 1e-8
    assert all(p.residual < 1e-9 for p in branch)


def test_criticality_from_synthetic_points():
    eps = np.linspace(-0.2, 0.2, 7)
    sub = classify_criticality([_point(e, -0.5 * e ** 2) for e in eps])
    assert sub['classification'] == 'subcritical'
    assert sub['mu1'] == pytest.approx(-0.5)
    quartic = classify_criticality([_point(e, 2.0 * e ** 4) for e in eps])
    assert quartic['classification'] == 'supercritical'
    assert quartic['order'] == 2
    with pytest.raises(ValidationError):
        classify_criticality([_point(0.1, 0.0)])


def test_phase_shift_rotates_side_values(supercritical):
    system, basis = supercritical
    point = newton_branch_point(system, basis, 0.05)
    shifted = phase_shift(point, 0.7)
    a, b = side_values(shifted.X, basis, system.gram)
    assert np.hypot(a, b) == pytest.approx(1.0, abs=1e-9)
    assert abs(b) > 0.1
    # the shifted orbit is the same curve, sampled later in phase
    tau = np.linspace(0.0, 2 * np.pi, 9)
    np.testing.assert_allclose(synthesize(shifted, tau), synthesize(point, tau + 0.7), atol=1e-12)
    restored = phase_normalize(shifted, basis, system.gram)
    assert restored.side_conditions[0] == pytest.approx(0.05, abs=1e-10)
    assert restored.side_conditions[1] == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(restored.X, point.X, atol=1e-9)


def test_evaluate_N_on_a_circle(supercritical):
    system, basis = supercritical
    eps = 0.2
    w = eps * basis.v1
    mean, fluct = evaluate_N(system, np.zeros(2), w, 0.0, kmax=3)
    np.testing.assert_allclose(mean, 0.0, atol=1e-13)
    np.testing.assert_allclose(fluct[0:2], -eps ** 3 * basis.v1, atol=1e-13)
    np.testing.assert_allclose(fluct[2:], 0.0, atol=1e-13)
    mean, _ = evaluate_N(system, np.zeros(2), np.zeros((2, 2)), 0.3)
    np.testing.assert_allclose(mean, 0.0)


def test_verify_system(supercritical):
    system, _ = supercritical
    assert verify_system(system)['passed']


def test_flat_parameter_dependence_is_singular(supercritical):
    system, basis = supercritical
    flat = SurrogateSystem('flat', system.J0, np.zeros((2, 2)), 0.0, lambda x: 0.0 * x,
                           lambda x: np.zeros((2, 2)), {})
    with pytest.raises(SolverError, match='singular'):
        HopfEngine(flat, basis).check_transversal()


def test_floquet_null_space_matches_basis(supercritical):
    system, basis = supercritical
    result = floquet_null_space(system, basis)
    assert result['passed']
