import numpy as np
import pytest
import scipy.linalg

from src.errors import SolverError, ValidationError
from src.fsi_system import FsiPencilFamily
from src.spectral import (Eigenpair, Pencil, check_nonresonance, check_simplicity, dense_spectrum, eigs_near_axis,
                          necessary_guard, track_mode)
from src.surrogates import make_planted_spectrum


@pytest.fixture(scope='module')
def planted():
    return make_planted_spectrum([2j, 0.3 + 1.2j, 0.2 + 2.7j, -0.1 + 3.5j, 0.4 + 0.6j],
                                 [0.7, 1.0, 1.0, 1.0, 1.0], lam_c=3.0)


def _pair(nu, n=2):
    v = np.zeros(n, dtype=complex)
    v[0] = 1.0
    return Eigenpair(complex(nu), v, np.zeros(0), 0.0)


def test_dense_spectrum_reproduces_planted_eigenvalues(planted):
    values = [p.nu for p in dense_spectrum(planted.pencil(3.0))]
    for nu in (2j, 0.3 + 1.2j, 0.2 + 2.7j, -0.1 + 3.5j, 0.4 + 0.6j):
        assert min(abs(v - nu) for v in values) < 1e-10
        assert min(abs(v - np.conj(nu)) for v in values) < 1e-10


def test_shift_invert_agrees_with_dense(planted):
    pencil = planted.pencil(3.0)
    dense = eigs_near_axis(pencil, 0.5, 4.0, method='dense')
    arnoldi = eigs_near_axis(pencil, 0.5, 4.0, n_shifts=4, n_eigs=6, method='shift-invert')
    assert len(dense) == len(arnoldi) == 5
    for a, b in zip(dense, arnoldi):
        assert abs(a.nu - b.nu) < 1e-8
        assert b.residual < 1e-8


def test_window_and_strip_filter(planted):
    pairs = eigs_near_axis(planted.pencil(3.0), 1.0, 3.0, re_strip=0.25, method='dense')
    assert [round(p.nu.imag, 6) for p in pairs] == [2.0, 2.7]
    assert all(1.0 <= p.nu.imag <= 3.0 for p in pairs)


def test_window_must_be_positive_and_ordered(planted):
    with pytest.raises(ValidationError):
        eigs_near_axis(planted.pencil(3.0), 0.0, 2.0)
    with pytest.raises(ValidationError):
        eigs_near_axis(planted.pencil(3.0), 2.0, 1.0)
    with pytest.raises(ValidationError):
        eigs_near_axis(planted.pencil(3.0), 0.5, 2.0, method='lanczos')


def test_constrained_pencil_matches_projected_operator(rng):
    n = 8
    J = rng.standard_normal((n, n))
    C = rng.standard_normal((2, n))
    Z = scipy.linalg.null_space(C)
    expected = np.linalg.eigvals(Z.T @ J @ Z)
    pencil = Pencil(J, np.eye(n), C)
    computed = [p.nu for p in dense_spectrum(pencil)]
    assert len(computed) == n - 2
    for nu in expected:
        assert min(abs(c - nu) for c in computed) < 1e-9
    for p in dense_spectrum(pencil):
        assert np.linalg.norm(C @ p.vector) < 1e-10
        assert abs(pencil.inner(p.vector, p.vector) - 1.0) < 1e-12


def test_simplicity_gap_excludes_conjugate_partner(planted):
    pencil = planted.pencil(3.0)
    pairs = eigs_near_axis(pencil, 0.5, 4.0, method='dense')
    critical = min(pairs, key=lambda p: abs(p.nu - 2j))
    result = check_simplicity(pencil, critical, pairs)
    assert result['simple']
    assert result['gap'] == pytest.approx(abs(2j - (0.2 + 2.7j)), rel=1e-8)


def test_close_pair_is_possibly_non_simple():
    J = np.diag([1.0, 1.0 + 1e-9, 3.0])
    pencil = Pencil(J, np.eye(3))
    pairs = dense_spectrum(pencil)
    result = check_simplicity(pencil, pairs[0], pairs)
    assert not result['simple']
    assert result['message'] == 'possibly non-simple'


def test_nonresonance_margins():
    pairs = [_pair(2j), _pair(0.5 + 4.2j)]
    result = check_nonresonance(2.0, pairs, kmax=3)
    assert result['passed']
    assert result['margins'][2] == pytest.approx(abs(4j - (0.5 + 4.2j)))
    assert result['margins'][3] == pytest.approx(abs(6j - (0.5 + 4.2j)))

    resonant = check_nonresonance(2.0, [_pair(2j), _pair(6j)], kmax=4)
    assert not resonant['passed']
    assert resonant['offending_k'] == 3


def test_track_mode_prefers_overlap():
    pencil = Pencil(np.eye(2), np.eye(2))
    previous = Eigenpair(1j, np.array([1.0, 0.0], dtype=complex), np.zeros(0), 0.0)
    near_wrong = Eigenpair(1.01j, np.array([0.0, 1.0], dtype=complex), np.zeros(0), 0.0)
    far_right = Eigenpair(1.5j, np.array([1.0, 0.05], dtype=complex), np.zeros(0), 0.0)
    assert track_mode(pencil, previous, [near_wrong, far_right]) is far_right
    with pytest.raises(SolverError, match='ambiguous'):
        track_mode(pencil, previous, [])


def test_guard_without_candidate():
    result = necessary_guard(None)
    assert not result['passed']
    assert 'no eigenvalue' in result['message']


@pytest.mark.slow
def test_fsi_spectrum_is_conjugate_symmetric(problem):
    pencil = FsiPencilFamily(problem).pencil(5.0)
    pairs = eigs_near_axis(pencil, 0.05, 2.0, n_shifts=3, n_eigs=6, method='shift-invert')
    assert pairs
    for p in pairs:
        assert p.residual < 1e-8
        assert np.linalg.norm(pencil.C @ p.vector) < 1e-8
        # the conjugate vector solves the pencil at the conjugate eigenvalue
        assert pencil.residual(np.conj(p.nu), np.conj(p.vector), np.conj(p.pressure)) < 1e-8
