"""
Finite-dimensional surrogate systems with known Hopf behaviour
Normal forms and planted-spectrum operators sharing the engine and spectral interfaces
"""
import logging
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.stats import ortho_group

from config.settings import RUN_SEED
from src.errors import ValidationError
from src.hopf_engine import AbstractSystem
from src.spectral import Pencil, PencilFamily

logger = logging.getLogger(__name__)

PLANTED_TOL = 1e-8


class SurrogateSystem(AbstractSystem, PencilFamily):
    """
    Dense system G x' + J(lambda) x = f(x) with G = I and J(lambda) = J0 + (lambda - lambda_c) S.
    In engine form mu = lambda - lambda_c and N(x, mu) = -mu S x + f(x).
    """

    def __init__(self, name: str, J0: np.ndarray, S: np.ndarray, lam_c: float,
                 f: Callable[[np.ndarray], np.ndarray], df: Callable[[np.ndarray], np.ndarray],
                 reference: Dict):
        self.name = name
        self.J0 = np.asarray(J0, dtype=float)
        self.S = np.asarray(S, dtype=float)
        self.lam_c = float(lam_c)
        self._f = f
        self._df = df
        self.reference = reference

    @property
    def n(self) -> int:
        return self.J0.shape[0]

    @property
    def gram(self) -> sp.csr_matrix:
        return sp.identity(self.n, format='csr')

    @property
    def linear(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.J0)

    @property
    def s011(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.S)

    def operator(self, lam: float) -> np.ndarray:
        return self.J0 + (lam - self.lam_c) * self.S

    def nonlinear(self, x, mu):
        return -mu * (self.S @ x) + self._f(x)

    def nonlinear_jacobian(self, x, mu):
        return sp.csr_matrix(-mu * self.S + self._df(x))

    def nonlinear_dmu(self, x, mu):
        return -(self.S @ x)

    def jacobian_at_rest_dmu(self, mu):
        return sp.csr_matrix(-self.S)

    def pencil(self, lam: float) -> Pencil:
        return Pencil(self.operator(lam), np.eye(self.n))

    def parameter_derivative(self, lam: float):
        return sp.csr_matrix(self.S)


def _rotation_block(nu: complex) -> np.ndarray:
    """Real 2x2 block with eigenvalues Re nu +/- i Im nu"""
    return np.array([[nu.real, nu.imag], [-nu.imag, nu.real]])


def make_normal_form(sign_cubic: int) -> SurrogateSystem:
    """
    x' = (mu + i) x + sign |x|^2 x as a real 2x2 system.
    sign -1 is supercritical (mu = eps^2), +1 subcritical (mu = -eps^2),
    0 is the degenerate rotation-invariant linear system (mu = 0).
    """
    if sign_cubic not in (-1, 0, 1):
        raise ValidationError("sign_cubic must be -1, 0 or +1")
    J0 = np.array([[0.0, 1.0], [-1.0, 0.0]])
    S = -np.eye(2)

    def f(x):
        return sign_cubic * (x @ x) * x

    def df(x):
        return sign_cubic * ((x @ x) * np.eye(2) + 2.0 * np.outer(x, x))

    reference = {'lambda_c': 0.0, 'zeta0': 1.0, 're_nu_prime': -1.0, 'mu1': float(-sign_cubic),
                 'law': 'mu = %+g eps^2, zeta = 1' % (-sign_cubic)}
    system = SurrogateSystem(f'normal-form({sign_cubic:+d})', J0, S, 0.0, f, df, reference)
    _verify(system, [1j], [-1.0], jordan=False)
    return system


def make_planted_spectrum(eigs: Sequence[complex], slopes: Sequence[complex], lam_c: float = 0.0,
                          jordan: bool = False, nonlinear_scale: float = 0.5,
                          seed: int = RUN_SEED) -> SurrogateSystem:
    """
    J(lambda) = Q blockdiag(B_k + (lambda - lambda_c) S_k) Q^T with the eigenvalue
    path nu_k(lambda) = eigs[k] + slopes[k] (lambda - lambda_c). The first entry is the
    critical pair; jordan=True doubles it into a Jordan block. Quadratic random nonlinearity.
    """
    eigs = [complex(e) for e in eigs]
    slopes = [complex(s) for s in slopes]
    if not eigs:
        raise ValidationError("inconsistent request: no eigenvalues planted")
    if len(slopes) != len(eigs):
        raise ValidationError("inconsistent request: one slope per planted eigenvalue required")
    for i, a in enumerate(eigs):
        for b in eigs[i + 1:]:
            if abs(a - b) < PLANTED_TOL or abs(a - np.conj(b)) < PLANTED_TOL:
                raise ValidationError("inconsistent request: planted eigenvalues must be distinct")
    for e, s in zip(eigs, slopes):
        if e.imag == 0.0 and s.imag != 0.0:
            raise ValidationError("inconsistent request: real eigenvalue with complex slope")
    if jordan and eigs[0].imag == 0.0:
        raise ValidationError("inconsistent request: Jordan block needs a complex pair")

    blocks, slope_blocks = [], []
    for k, (e, s) in enumerate(zip(eigs, slopes)):
        if e.imag == 0.0:
            B, Sb = np.array([[e.real]]), np.array([[s.real]])
        else:
            B, Sb = _rotation_block(e), _rotation_block(s)
        if k == 0 and jordan:
            B = np.block([[B, np.eye(2)], [np.zeros((2, 2)), B]])
            Sb = np.block([[Sb, np.zeros((2, 2))], [np.zeros((2, 2)), Sb]])
        blocks.append(B)
        slope_blocks.append(Sb)
    D = scipy.linalg.block_diag(*blocks)
    Ds = scipy.linalg.block_diag(*slope_blocks)
    n = D.shape[0]
    Q = ortho_group.rvs(n, random_state=seed) if n > 1 else np.eye(1)
    J0 = Q @ D @ Q.T
    S = Q @ Ds @ Q.T

    rng = np.random.default_rng(seed + 1)
    T = rng.standard_normal((n, n, n))
    T = nonlinear_scale * 0.5 * (T + T.transpose(0, 2, 1)) / n

    def f(x):
        return np.einsum('ijk,j,k->i', T, x, x)

    def df(x):
        return 2.0 * np.einsum('ijk,k->ij', T, x)

    critical = eigs[0]
    reference = {'lambda_c': float(lam_c), 'zeta0': float(abs(critical.imag)),
                 're_nu_prime': float(slopes[0].real), 'eigs': eigs, 'slopes': slopes, 'jordan': jordan}
    name = 'planted-jordan' if jordan else 'planted'
    system = SurrogateSystem(name, J0, S, lam_c, f, df, reference)
    _verify(system, eigs, slopes, jordan)
    return system


def _verify(system: SurrogateSystem, eigs, slopes, jordan: bool):
    """Recompute the planted spectrum and its lambda-slope from the dense matrices"""
    def planted(t):
        values = []
        for k, (e, s) in enumerate(zip(eigs, slopes)):
            nu = complex(e) + complex(s) * t
            group = [nu] if nu.imag == 0.0 else [nu, np.conj(nu)]
            values += group * (2 if (k == 0 and jordan) else 1)
        return values

    tol = 1e-6 if jordan else PLANTED_TOL
    for t in (0.0, 1.0):
        computed = list(np.linalg.eigvals(system.operator(system.lam_c + t)))
        expected = planted(t)
        scale = max(1.0, max(abs(e) for e in expected))
        if len(computed) != len(expected):
            raise ValidationError(f"inconsistent request: planted spectrum not reproduced for {system.name}")
        for e in expected:
            j = int(np.argmin([abs(c - e) for c in computed]))
            if abs(computed[j] - e) > tol * scale:
                raise ValidationError(f"inconsistent request: planted spectrum not reproduced for {system.name}")
            computed.pop(j)
    logger.debug("Verified planted spectrum of %s", system.name)


SURROGATE_CASES = {
    'normal-form-super': lambda: make_normal_form(-1),
    'normal-form-sub': lambda: make_normal_form(+1),
    'normal-form-degenerate': lambda: make_normal_form(0),
    'planted': lambda: make_planted_spectrum([2j, 0.5 + 3.3j, 1.2 + 0.9j], [0.7, 0.1 + 0.05j, -0.2 + 0.1j],
                                             lam_c=3.0),
    'planted-resonance': lambda: make_planted_spectrum([2j, 4j], [0.7, 0.3], lam_c=3.0),
    'planted-jordan': lambda: make_planted_spectrum([2j, 1.0 + 5j], [0.7, 0.1], lam_c=3.0, jordan=True),
}


def make_case(name: str) -> SurrogateSystem:
    if name not in SURROGATE_CASES:
        raise ValidationError(f"unknown surrogate case '{name}' (choose from {', '.join(SURROGATE_CASES)})")
    return SURROGATE_CASES[name]()
