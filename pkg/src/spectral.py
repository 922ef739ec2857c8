"""
Eigenvalue analysis near the imaginary axis
Shift-invert Arnoldi on the constrained pencil, simplicity and non-resonance checks,
adjoint eigenvectors, transversality and the lambda crossing search
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs, splu

from config.settings import (
    RUN_SEED,
    SPECTRAL_AXIS_TOL,
    SPECTRAL_CROSSING_TOL,
    SPECTRAL_DENSE_MAX,
    SPECTRAL_KMAX,
    SPECTRAL_N_EIGS,
    SPECTRAL_N_SHIFTS,
    SPECTRAL_RE_STRIP,
    SPECTRAL_RESIDUAL_TOL,
    SPECTRAL_SHIFT_RETRIES,
    SPECTRAL_TOL_RESONANCE,
    SPECTRAL_TOL_SIMPLICITY,
)
from src.errors import SolverError, ValidationError

logger = logging.getLogger(__name__)

PAIRING_TOL = 1e-10
JORDAN_PAIRING_TOL = 1e-6
DUPLICATE_TOL = 1e-8
INFINITE_EIGENVALUE = 1e10


class Pencil:
    """
    Constrained generalized eigenproblem
        J v + C^T q = nu G v,   C v = 0
    realized as the saddle pencil A_s z = nu B_s z
    """

    def __init__(self, J, G, C=None):
        self.J = sp.csr_matrix(J)
        self.G = sp.csr_matrix(G)
        n = self.J.shape[0]
        self.C = sp.csr_matrix((0, n)) if C is None else sp.csr_matrix(C)
        self.n = n
        self.m = self.C.shape[0]
        self._gram_lu = None

    @property
    def size(self) -> int:
        return self.n + self.m

    def saddle(self, transpose: bool = False) -> sp.csr_matrix:
        J = self.J.conj().T if transpose else self.J
        if self.m == 0:
            return sp.csr_matrix(J)
        return sp.bmat([[J, self.C.T], [self.C, None]], format='csr')

    def mass(self) -> sp.csr_matrix:
        if self.m == 0:
            return self.G
        return sp.block_diag([self.G, sp.csr_matrix((self.m, self.m))], format='csr')

    def gram_solve(self, r: np.ndarray) -> np.ndarray:
        if self._gram_lu is None:
            self._gram_lu = splu(self.G.tocsc())
        if np.iscomplexobj(r):
            return self._gram_lu.solve(np.real(r)) + 1j * self._gram_lu.solve(np.imag(r))
        return self._gram_lu.solve(r)

    def inner(self, x: np.ndarray, y: np.ndarray) -> complex:
        return np.vdot(x, self.G @ y)

    def residual(self, nu: complex, v: np.ndarray, q: np.ndarray, transpose: bool = False) -> float:
        """Gram-dual norm of J v + C^T q - nu G v, plus the constraint defect, relative to |v|_G"""
        J = self.J.conj().T if transpose else self.J
        r = J @ v - nu * (self.G @ v)
        if self.m:
            r = r + self.C.T @ q
        dual = np.sqrt(abs(np.vdot(r, self.gram_solve(r))))
        scale = np.sqrt(abs(self.inner(v, v)))
        defect = np.linalg.norm(self.C @ v) if self.m else 0.0
        return float((dual + defect) / max(scale, 1e-300))


@dataclass
class Eigenpair:
    """Eigenvalue with right vector normalized <v, v> = 1, largest component real positive"""

    nu: complex
    vector: np.ndarray
    pressure: np.ndarray
    residual: float


@dataclass
class HopfCandidate:
    """Critical pair nu0 = i zeta0 at lambda_o with its adjoint and diagnostics"""

    lam_o: float
    zeta0: float
    nu0: complex
    v0: np.ndarray
    v0_pressure: np.ndarray
    v0_adjoint: np.ndarray
    simplicity_gap: float
    simplicity: Dict
    nonresonance: Dict
    re_nu_prime: float
    nu_prime: complex
    spectrum: List[Eigenpair] = field(default_factory=list)

    @property
    def nonresonance_margins(self) -> Dict[int, float]:
        return self.nonresonance['margins']

    def summary(self) -> Dict:
        return {
            'lambda_o': self.lam_o,
            'zeta0': self.zeta0,
            'nu0': self.nu0,
            'simplicity_gap': self.simplicity_gap,
            'possibly_non_simple': not self.simplicity['simple'],
            'nonresonance_margins': self.nonresonance['margins'],
            'nonresonance_passed': self.nonresonance['passed'],
            're_nu_prime': self.re_nu_prime,
            'nu_prime': self.nu_prime,
            'pairing': complex(self.simplicity.get('pairing_value', 0.0)),
        }


def normalize_pair(pencil: Pencil, nu: complex, v: np.ndarray, q: np.ndarray) -> Eigenpair:
    scale = np.sqrt(abs(pencil.inner(v, v)))
    v, q = v / scale, q / scale
    idx = int(np.argmax(np.abs(v)))
    phase = np.conj(v[idx]) / abs(v[idx])
    v, q = v * phase, q * phase
    return Eigenpair(complex(nu), v, q, pencil.residual(nu, v, q))


def dense_spectrum(pencil: Pencil) -> List[Eigenpair]:
    """All finite eigenpairs by dense QZ; the oracle path for small problems"""
    A = pencil.saddle().toarray()
    B = pencil.mass().toarray()
    w, V = scipy.linalg.eig(A, B)
    pairs = []
    for k in np.flatnonzero(np.isfinite(w) & (np.abs(w) < INFINITE_EIGENVALUE)):
        z = V[:, k]
        pairs.append(normalize_pair(pencil, w[k], z[:pencil.n], z[pencil.n:]))
    pairs.sort(key=lambda p: (p.nu.imag, p.nu.real))
    return pairs


def _factor_shift(pencil: Pencil, shift: complex, transpose: bool = False):
    K = (pencil.saddle(transpose).astype(complex) - shift * pencil.mass()).tocsc()
    return splu(K)


def _shift_invert(pencil: Pencil, shift: complex, n_eigs: int, seed: int,
                  retries: int = SPECTRAL_SHIFT_RETRIES) -> List[Eigenpair]:
    rng = np.random.default_rng(seed)
    B = pencil.mass()
    N = pencil.size
    k = max(1, min(n_eigs, N - 2))
    s = shift
    for attempt in range(retries + 1):
        try:
            lu = _factor_shift(pencil, s)
            op = LinearOperator((N, N), matvec=lambda x, lu=lu: lu.solve(B @ x.astype(complex)), dtype=complex)
            v0 = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            theta, Z = eigs(op, k=k, which='LM', v0=v0)
            break
        except (RuntimeError, ArpackError, ArpackNoConvergence) as exc:
            if attempt == retries:
                raise SolverError(f"shift-invert failed at shift {shift:.6g} after {retries} retries: {exc}")
            s = shift + (1e-6 * (attempt + 1)) * (1.0 + 1j) * max(1.0, abs(shift))
            logger.warning("Shift %.6g failed (%s), retrying at %.6g", shift, exc, s)
    pairs = []
    for j in range(len(theta)):
        if abs(theta[j]) < 1.0 / INFINITE_EIGENVALUE:
            continue
        nu = s + 1.0 / theta[j]
        z = Z[:, j]
        pairs.append(normalize_pair(pencil, nu, z[:pencil.n], z[pencil.n:]))
    return pairs


def refine_pair(pencil: Pencil, pair: Eigenpair, steps: int = 2) -> Eigenpair:
    """Inverse iteration at the current eigenvalue estimate"""
    v, q = inverse_iteration(pencil, pair.nu, start=np.concatenate([pair.vector, pair.pressure]), steps=steps)
    # Rayleigh quotient restricted to the constrained space
    nu = np.vdot(v, pencil.J @ v) / pencil.inner(v, v)
    return normalize_pair(pencil, nu, v, q)


def inverse_iteration(pencil: Pencil, nu: complex, start: Optional[np.ndarray] = None, steps: int = 3,
                      transpose: bool = False, seed: int = RUN_SEED) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvector of the pencil (or its conjugate transpose) at a known eigenvalue"""
    shift = np.conj(nu) if transpose else nu
    B = pencil.mass()
    lu = None
    for attempt in range(SPECTRAL_SHIFT_RETRIES + 1):
        try:
            lu = _factor_shift(pencil, shift, transpose)
            break
        except RuntimeError:
            shift = shift + 1e-12 * max(1.0, abs(nu)) * (attempt + 1)
    if lu is None:
        raise SolverError(f"inverse iteration failed at nu = {nu:.6g}")
    if start is None:
        rng = np.random.default_rng(seed)
        start = rng.standard_normal(pencil.size) + 1j * rng.standard_normal(pencil.size)
    z = start.astype(complex)
    for _ in range(steps):
        z = lu.solve(B @ z)
        z /= np.linalg.norm(z)
    return z[:pencil.n], z[pencil.n:]


def adjoint_eigenvector(pencil: Pencil, nu: complex) -> np.ndarray:
    """u with J^H u + C^T r = conj(nu) G u, C u = 0"""
    u, _ = inverse_iteration(pencil, nu, transpose=True)
    return u


def _merge(pairs: Sequence[Eigenpair]) -> List[Eigenpair]:
    merged: List[Eigenpair] = []
    for p in sorted(pairs, key=lambda p: (p.nu.imag, p.nu.real)):
        dup = next((m for m in merged if abs(m.nu - p.nu) < DUPLICATE_TOL * max(1.0, abs(p.nu))), None)
        if dup is None:
            merged.append(p)
        elif p.residual < dup.residual:
            merged[merged.index(dup)] = p
    return merged


def eigs_near_axis(pencil: Pencil, zeta_min: float, zeta_max: float, n_eigs: int = SPECTRAL_N_EIGS,
                   n_shifts: int = SPECTRAL_N_SHIFTS, re_strip: float = SPECTRAL_RE_STRIP,
                   residual_tol: float = SPECTRAL_RESIDUAL_TOL, jobs: int = 1, seed: int = RUN_SEED,
                   method: str = 'auto') -> List[Eigenpair]:
    """Eigenpairs with Im nu in [zeta_min, zeta_max] and |Re nu| <= re_strip, sorted by Im nu"""
    if not zeta_min > 0:
        raise ValidationError("window zeta_min must be positive")
    if zeta_max <= zeta_min:
        raise ValidationError("window zeta_max must exceed zeta_min")
    if method == 'auto':
        method = 'dense' if pencil.size <= SPECTRAL_DENSE_MAX else 'shift-invert'

    if method == 'dense':
        found = dense_spectrum(pencil)
    elif method == 'shift-invert':
        shifts = 1j * np.linspace(zeta_min, zeta_max, max(n_shifts, 1))
        tasks = [(pencil, s, n_eigs, seed + i) for i, s in enumerate(shifts)]
        with ThreadPool(max(1, jobs)) as pool:
            chunks = pool.starmap(_shift_invert, tasks)
        logger.info("Processed %d shifts", len(shifts))
        found = [p for chunk in chunks for p in chunk]
    else:
        raise ValidationError(f"unknown eigen method '{method}'")

    selected = []
    for p in _merge(found):
        if not (zeta_min <= p.nu.imag <= zeta_max and abs(p.nu.real) <= re_strip):
            continue
        if p.residual >= residual_tol:
            p = refine_pair(pencil, p)
        if p.residual >= residual_tol:
            logger.warning("Eigenvalue %s dropped (residual %.2e)", p.nu, p.residual)
            continue
        selected.append(p)
    return selected


def check_simplicity(pencil: Pencil, pair: Eigenpair, all_pairs: Sequence[Eigenpair],
                     tol: float = SPECTRAL_TOL_SIMPLICITY, adjoint: Optional[np.ndarray] = None) -> Dict:
    """
    Gap to the nearest other eigenvalue (the conjugate partner excluded) and a
    pairing test: a Jordan block has <u, v> = 0 for its left/right vectors
    """
    partner = np.conj(pair.nu)
    same = 1e-12 * max(1.0, abs(pair.nu))
    others = [p.nu for p in all_pairs if p is not pair and abs(p.nu - partner) > same]
    others += [np.conj(o) for o in others]
    gap = float(min((abs(o - pair.nu) for o in others), default=np.inf))
    u = adjoint_eigenvector(pencil, pair.nu) if adjoint is None else adjoint
    value = pencil.inner(u, pair.vector)
    pairing = abs(value) / np.sqrt(abs(pencil.inner(u, u)) * abs(pencil.inner(pair.vector, pair.vector)))
    simple = gap > tol and pairing > JORDAN_PAIRING_TOL
    if not simple:
        logger.warning("Eigenvalue %s possibly non-simple (gap %.2e, pairing %.2e)", pair.nu, gap, pairing)
    return {'gap': gap, 'pairing': float(pairing), 'pairing_value': value, 'simple': bool(simple),
            'message': 'simple' if simple else 'possibly non-simple'}


def check_nonresonance(zeta0: float, pairs: Sequence[Eigenpair], kmax: int = SPECTRAL_KMAX,
                       tol: float = SPECTRAL_TOL_RESONANCE) -> Dict:
    """Distance from i k zeta0 to the computed spectrum for k = 2..kmax"""
    spectrum = [p.nu for p in pairs] + [np.conj(p.nu) for p in pairs]
    margins = {}
    for k in range(2, kmax + 1):
        target = 1j * k * zeta0
        margins[k] = float(min((abs(target - s) for s in spectrum), default=np.inf))
    offending = [k for k, m in margins.items() if m < tol]
    return {'margins': margins, 'passed': not offending,
            'offending_k': offending[0] if offending else None,
            'message': 'non-resonant' if not offending else f"resonance at k = {offending[0]}"}


def nu_prime(pencil: Pencil, S, v: np.ndarray, u: np.ndarray) -> complex:
    """d nu / d lambda = <u, S v> / <u, v> for J(lambda) = J + (lambda - lambda_o) S"""
    pairing = pencil.inner(u, v)
    scale = np.sqrt(abs(pencil.inner(u, u)) * abs(pencil.inner(v, v)))
    if abs(pairing) < PAIRING_TOL * scale:
        raise SolverError("defective pairing")
    return complex(np.vdot(u, S @ v) / pairing)


def transversality(pencil: Pencil, S, v: np.ndarray, u: np.ndarray) -> float:
    """Re nu'(0), independent of the scaling of v and u"""
    return float(nu_prime(pencil, S, v, u).real)


def track_mode(pencil: Pencil, previous: Eigenpair, candidates: Sequence[Eigenpair],
               overlap_tie: float = 1e-3, min_overlap: float = 0.1) -> Eigenpair:
    """Pick the candidate with maximal Gram overlap with the previous mode; ties by proximity"""
    if not candidates:
        raise SolverError("mode tracking ambiguous (no candidates)")
    def overlap(p):
        return abs(pencil.inner(previous.vector, p.vector)) / np.sqrt(
            abs(pencil.inner(previous.vector, previous.vector)) * abs(pencil.inner(p.vector, p.vector)))
    scored = sorted(((overlap(p), p) for p in candidates), key=lambda t: -t[0])
    best, best_pair = scored[0]
    if best < min_overlap:
        raise SolverError("mode tracking ambiguous (overlap %.3f)" % best)
    tied = [p for o, p in scored if best - o <= overlap_tie]
    if len(tied) == 1:
        return best_pair
    tied.sort(key=lambda p: abs(p.nu - previous.nu))
    d0, d1 = abs(tied[0].nu - previous.nu), abs(tied[1].nu - previous.nu)
    if abs(d1 - d0) <= 1e-12 * max(1.0, d0):
        raise SolverError("mode tracking ambiguous")
    return tied[0]


class PencilFamily(ABC):
    """Pencils depending on lambda, with their lambda-derivative"""

    @abstractmethod
    def pencil(self, lam: float) -> Pencil:
        """Constrained pencil at lambda"""

    @abstractmethod
    def parameter_derivative(self, lam: float):
        """dJ/dlambda at lambda"""


def _least_stable(pairs: Sequence[Eigenpair]) -> Optional[Eigenpair]:
    return min(pairs, key=lambda p: p.nu.real) if pairs else None


def build_candidate(pencil: Pencil, S, lam_o: float, pair: Eigenpair, pairs: Sequence[Eigenpair],
                    kmax: int = SPECTRAL_KMAX, tol_simplicity: float = SPECTRAL_TOL_SIMPLICITY,
                    tol_resonance: float = SPECTRAL_TOL_RESONANCE) -> HopfCandidate:
    """Adjoint, normalization <v0_adj, v0> = 1/pi, and every (H2') diagnostic"""
    u = adjoint_eigenvector(pencil, pair.nu)
    simplicity = check_simplicity(pencil, pair, pairs, tol_simplicity, adjoint=u)
    nonresonance = check_nonresonance(pair.nu.imag, pairs, kmax, tol_resonance)
    if not nonresonance['passed']:
        logger.warning("Candidate at zeta0=%.6g fails nonresonance: %s", pair.nu.imag, nonresonance['message'])
    dnu = nu_prime(pencil, S, pair.vector, u)
    pairing = pencil.inner(u, pair.vector)
    u = u * np.conj(1.0 / (np.pi * pairing))
    return HopfCandidate(lam_o=float(lam_o), zeta0=float(pair.nu.imag), nu0=pair.nu, v0=pair.vector,
                         v0_pressure=pair.pressure, v0_adjoint=u, simplicity_gap=simplicity['gap'],
                         simplicity=simplicity, nonresonance=nonresonance, re_nu_prime=float(dnu.real),
                         nu_prime=dnu, spectrum=list(pairs))


def find_crossing(family: PencilFamily, lam_range: Tuple[float, float], zeta_min: float, zeta_max: float,
                  kmax: int = SPECTRAL_KMAX, tol: float = SPECTRAL_CROSSING_TOL,
                  tol_simplicity: float = SPECTRAL_TOL_SIMPLICITY, tol_resonance: float = SPECTRAL_TOL_RESONANCE,
                  **eig_kw) -> HopfCandidate:
    """Bracket and bisect Re nu(lambda) = 0 for the tracked least-stable mode"""
    a, b = float(lam_range[0]), float(lam_range[1])
    if b <= a:
        raise ValidationError("lambda range must be increasing")

    def spectrum(lam, window_max=zeta_max):
        return eigs_near_axis(family.pencil(lam), zeta_min, window_max, **eig_kw)

    pa, pb = _least_stable(spectrum(a)), _least_stable(spectrum(b))
    if pa is None or pb is None or np.sign(pa.nu.real) == np.sign(pb.nu.real):
        raise SolverError("no crossing bracketed")

    state = {'ref': pb if pb.nu.real < 0 else pa}

    def re_nu(lam):
        pairs = spectrum(lam)
        state['ref'] = track_mode(family.pencil(lam), state['ref'], pairs)
        return state['ref'].nu.real

    lam_o = brentq(re_nu, a, b, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=200)
    logger.info("Crossing located at lambda_o = %.10g", lam_o)

    pencil = family.pencil(lam_o)
    zeta_est = state['ref'].nu.imag
    pairs = eigs_near_axis(pencil, zeta_min, max(zeta_max, (kmax + 0.5) * zeta_est), **eig_kw)
    pair = track_mode(pencil, state['ref'], pairs)
    if abs(pair.nu.real) >= tol:
        logger.warning("Re nu at the crossing is %.2e (tolerance %.1e)", pair.nu.real, tol)
    return build_candidate(pencil, family.parameter_derivative(lam_o), lam_o, pair, pairs, kmax,
                           tol_simplicity, tol_resonance)


def candidate_at(family: PencilFamily, lam: float, zeta_min: float, zeta_max: float,
                 kmax: int = SPECTRAL_KMAX, tol_simplicity: float = SPECTRAL_TOL_SIMPLICITY,
                 tol_resonance: float = SPECTRAL_TOL_RESONANCE, **eig_kw) -> Optional[HopfCandidate]:
    """Candidate from the eigenvalue closest to the axis at a fixed lambda"""
    pencil = family.pencil(lam)
    pairs = eigs_near_axis(pencil, zeta_min, zeta_max, **eig_kw)
    pair = min(pairs, key=lambda p: abs(p.nu.real), default=None)
    if pair is None:
        return None
    extended = eigs_near_axis(pencil, zeta_min, max(zeta_max, (kmax + 0.5) * pair.nu.imag), **eig_kw)
    return build_candidate(pencil, family.parameter_derivative(lam), lam, pair, extended, kmax,
                           tol_simplicity, tol_resonance)


def necessary_guard(candidate: Optional[HopfCandidate], axis_tol: float = SPECTRAL_AXIS_TOL) -> Dict:
    """
    Necessary condition for a periodic branch: a simple, non-resonant, purely
    imaginary eigenvalue. Passing never asserts that a bifurcation occurs.
    """
    if candidate is None:
        return {'passed': False, 'message': 'no eigenvalue near the imaginary axis', 'checks': {}}
    checks = {
        'purely_imaginary': abs(candidate.nu0.real) <= axis_tol,
        'zeta0_positive': candidate.zeta0 > 0,
        'simple': bool(candidate.simplicity['simple']),
        'nonresonant': bool(candidate.nonresonance['passed']),
        'transversal': abs(candidate.re_nu_prime) > 0.0,
    }
    passed = all(checks.values())
    if passed:
        message = 'necessary conditions hold; bifurcation not asserted'
    else:
        failed = ', '.join(k for k, ok in checks.items() if not ok)
        message = f"necessary conditions fail: {failed}"
    return {'passed': passed, 'message': message, 'checks': checks}
