"""
Hopf branch engine
Harmonic-balance realization of the periodic bifurcation problem: oscillatory bases,
the bordered Newton system in the scaled unknowns (X, P, zeta, mu), branch continuation
in the amplitude and criticality classification. Generic over AbstractSystem.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from sklearn.linear_model import LinearRegression

from config.settings import BRANCH_KMAX, BRANCH_MAX_ITER, BRANCH_NOISE_FLOOR, BRANCH_TOL, RUN_SEED
from src.errors import SolverError, ValidationError
from src.spectral import HopfCandidate

logger = logging.getLogger(__name__)

BIORTHOGONALITY_TOL = 1e-8
SINGULAR_TOL = 1e-12


class AbstractSystem(ABC):
    """
    Evolution G x' + J0 x + C^T p = N(x, mu), C x = 0, with N(0, mu) = 0 and
    D_x N(0, 0) = 0. The lambda-derivative of the linear part is S011.
    """

    @property
    @abstractmethod
    def n(self) -> int:
        """Number of state unknowns"""

    @property
    @abstractmethod
    def gram(self) -> sp.csr_matrix:
        """Gram matrix of the state inner product"""

    @property
    def constraint(self) -> sp.csr_matrix:
        return sp.csr_matrix((0, self.n))

    @property
    def m(self) -> int:
        return self.constraint.shape[0]

    @property
    @abstractmethod
    def linear(self) -> sp.csr_matrix:
        """J0, the weak linear operator at mu = 0"""

    @property
    @abstractmethod
    def s011(self) -> sp.csr_matrix:
        """d J / d mu at mu = 0"""

    @abstractmethod
    def nonlinear(self, x: np.ndarray, mu: float) -> np.ndarray:
        """N(x, mu)"""

    @abstractmethod
    def nonlinear_jacobian(self, x: np.ndarray, mu: float) -> sp.csr_matrix:
        """D_x N(x, mu)"""

    @abstractmethod
    def nonlinear_dmu(self, x: np.ndarray, mu: float) -> np.ndarray:
        """d N / d mu at (x, mu)"""

    @abstractmethod
    def jacobian_at_rest_dmu(self, mu: float) -> sp.csr_matrix:
        """d/dmu D_x N(0, mu)"""

    # Scaled nonlinearity N(eps X, mu) / eps and its derivatives

    def scaled_nonlinear(self, X: np.ndarray, mu: float, eps: float) -> np.ndarray:
        if eps == 0.0:
            return self.nonlinear_jacobian(np.zeros(self.n), mu) @ X
        return self.nonlinear(eps * X, mu) / eps

    def scaled_jacobian(self, X: np.ndarray, mu: float, eps: float) -> sp.csr_matrix:
        return sp.csr_matrix(self.nonlinear_jacobian(eps * X, mu))

    def scaled_dmu(self, X: np.ndarray, mu: float, eps: float) -> np.ndarray:
        if eps == 0.0:
            return self.jacobian_at_rest_dmu(mu) @ X
        return self.nonlinear_dmu(eps * X, mu) / eps


class HarmonicGrid:
    """Real Fourier layout [mean, cos1, sin1, ..., cosK, sinK] and its time grid"""

    def __init__(self, kmax: int):
        if kmax < 1:
            raise ValidationError("harmonic truncation kmax must be at least 1")
        self.kmax = kmax
        self.R = 2 * kmax + 1
        self.Nt = max(4 * kmax, 8)
        self.tau = 2.0 * np.pi * np.arange(self.Nt) / self.Nt

        E = np.ones((self.Nt, self.R))
        Pr = np.full((self.R, self.Nt), 1.0 / self.Nt)
        D = np.zeros((self.R, self.R))
        for r in range(1, kmax + 1):
            c, s = 2 * r - 1, 2 * r
            E[:, c] = np.cos(r * self.tau)
            E[:, s] = np.sin(r * self.tau)
            Pr[c] = 2.0 / self.Nt * np.cos(r * self.tau)
            Pr[s] = 2.0 / self.Nt * np.sin(r * self.tau)
            D[c, s] = r
            D[s, c] = -r
        self.synthesis = E
        self.analysis = Pr
        self.derivative = D
        self.weights = np.array([2.0 * np.pi] + [np.pi] * (self.R - 1))

    def wavenumbers(self) -> np.ndarray:
        return np.array([0] + [r for r in range(1, self.kmax + 1) for _ in range(2)])

    def embed_first(self, first: np.ndarray) -> np.ndarray:
        """(2, n) first-harmonic coefficients -> (R, n)"""
        out = np.zeros((self.R, first.shape[1]))
        out[1:3] = first
        return out

    def pairing(self, a: np.ndarray, b: np.ndarray, G) -> float:
        """(a|b) = integral over one period of <a(tau), b(tau)>"""
        return float(sum(w * (a[r] @ (G @ b[r])) for r, w in enumerate(self.weights)))


@dataclass
class OscBasis:
    """Null and adjoint bases of zeta0 d/dtau + L2 as first-harmonic coefficients (cos1, sin1)"""

    zeta0: float
    lam_o: float
    v0: np.ndarray
    v0_pressure: np.ndarray
    v0_adjoint: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    v1_adj: np.ndarray
    v2_adj: np.ndarray
    p1: np.ndarray

    def biorthogonality(self, G) -> Dict[str, float]:
        grid = HarmonicGrid(1)
        e = grid.embed_first
        D = grid.derivative
        v1t = D @ e(self.v1)
        return {
            'v1_v1adj': grid.pairing(e(self.v1), e(self.v1_adj), G),
            'v2_v2adj': grid.pairing(e(self.v2), e(self.v2_adj), G),
            'v2_v1adj': grid.pairing(e(self.v2), e(self.v1_adj), G),
            'v1_v2adj': grid.pairing(e(self.v1), e(self.v2_adj), G),
            'v1tau_v1adj': grid.pairing(v1t, e(self.v1_adj), G),
            'v1tau_v2adj': grid.pairing(v1t, e(self.v2_adj), G),
        }


def build_bases(candidate: HopfCandidate, gram) -> OscBasis:
    """v1 = Re[v0 e^{-i tau}], v2 = Im[v0 e^{-i tau}] and the adjoint pair, with <v0, v0> = 2"""
    v = candidate.v0
    u = candidate.v0_adjoint
    norm2 = np.vdot(v, gram @ v).real
    pairing = np.vdot(u, gram @ v)
    if abs(pairing) < SINGULAR_TOL * np.sqrt(norm2 * abs(np.vdot(u, gram @ u))):
        raise SolverError("defective pairing")
    scale = np.sqrt(2.0 / norm2)
    v = v * scale
    q = candidate.v0_pressure * scale
    u = u * np.conj(1.0 / (np.pi * np.vdot(u, gram @ v)))

    basis = OscBasis(
        zeta0=candidate.zeta0, lam_o=candidate.lam_o, v0=v, v0_pressure=q, v0_adjoint=u,
        v1=np.vstack([v.real, v.imag]), v2=np.vstack([v.imag, -v.real]),
        v1_adj=np.vstack([u.real, u.imag]), v2_adj=np.vstack([u.imag, -u.real]),
        p1=np.vstack([q.real, q.imag]),
    )
    relations = basis.biorthogonality(gram)
    expected = {'v1_v1adj': 1.0, 'v2_v2adj': 1.0, 'v2_v1adj': 0.0, 'v1_v2adj': 0.0,
                'v1tau_v1adj': 0.0, 'v1tau_v2adj': 1.0}
    worst = max(abs(relations[k] - expected[k]) for k in expected)
    if worst > BIORTHOGONALITY_TOL:
        raise SolverError(f"biorthogonality defect {worst:.2e}")
    return basis


@dataclass
class PeriodicBranchPoint:
    """One periodic solution; X and P hold scaled harmonics (unscaled state = epsilon X)"""

    epsilon: float
    mu: float
    zeta: float
    X: np.ndarray
    P: np.ndarray
    residual: float
    iterations: int
    side_conditions: Tuple[float, float] = (0.0, 0.0)
    meta: Dict = field(default_factory=dict)

    @property
    def kmax(self) -> int:
        return (self.X.shape[0] - 1) // 2

    @property
    def v(self) -> np.ndarray:
        """Steady correction (time average)"""
        return self.epsilon * self.X[0]

    @property
    def w(self) -> np.ndarray:
        """Oscillatory part, harmonics 1..K"""
        return self.epsilon * self.X[1:]

    @property
    def amplitude(self) -> float:
        return self.side_conditions[0]

    def amplitude_L2(self, gram) -> float:
        """sqrt((w|w) / 2 pi)"""
        w = self.w
        return float(np.sqrt(sum(np.pi * (w[r] @ (gram @ w[r])) for r in range(w.shape[0])) / (2.0 * np.pi)))


def phase_shift(point: PeriodicBranchPoint, theta: float) -> PeriodicBranchPoint:
    """Time shift tau -> tau + theta"""
    def shift(A):
        out = A.copy()
        for r in range(1, (A.shape[0] - 1) // 2 + 1):
            c, s = A[2 * r - 1], A[2 * r]
            out[2 * r - 1] = c * np.cos(r * theta) + s * np.sin(r * theta)
            out[2 * r] = -c * np.sin(r * theta) + s * np.cos(r * theta)
        return out
    return PeriodicBranchPoint(point.epsilon, point.mu, point.zeta, shift(point.X), shift(point.P),
                               point.residual, point.iterations, point.side_conditions, dict(point.meta))


def side_values(X: np.ndarray, basis: OscBasis, gram) -> Tuple[float, float]:
    grid = HarmonicGrid((X.shape[0] - 1) // 2)
    a = grid.pairing(X, grid.embed_first(basis.v1_adj), gram)
    b = grid.pairing(X, grid.embed_first(basis.v2_adj), gram)
    return a, b


def phase_normalize(point: PeriodicBranchPoint, basis: OscBasis, gram) -> PeriodicBranchPoint:
    """Shift so that (X|v2_adj) = 0 and (X|v1_adj) > 0; a shift by theta rotates the pair by +theta"""
    a, b = side_values(point.X, basis, gram)
    shifted = phase_shift(point, -np.arctan2(b, a))
    a, b = side_values(shifted.X, basis, gram)
    shifted.side_conditions = (point.epsilon * a, point.epsilon * b)
    return shifted


def synthesize(point: PeriodicBranchPoint, tau) -> np.ndarray:
    """Unscaled state at times tau, shape (len(tau), n)"""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    E = np.ones((tau.size, point.X.shape[0]))
    for r in range(1, point.kmax + 1):
        E[:, 2 * r - 1] = np.cos(r * tau)
        E[:, 2 * r] = np.sin(r * tau)
    return point.epsilon * (E @ point.X)


def evaluate_N(system: AbstractSystem, v: np.ndarray, w: np.ndarray, mu: float,
               kmax: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean / fluctuation split of N for the unscaled periodic state v + w(tau).
    w holds harmonics (cos1, sin1, ..., cosK, sinK); returns (N1, N2) with N2 zero-mean.
    """
    w = np.atleast_2d(w)
    K = kmax or w.shape[0] // 2
    grid = HarmonicGrid(K)
    X = np.zeros((grid.R, system.n))
    X[0] = v
    rows = min(w.shape[0], grid.R - 1)
    X[1:1 + rows] = w[:rows]
    samples = grid.synthesis @ X
    values = np.vstack([system.nonlinear(samples[j], mu) for j in range(grid.Nt)])
    coeffs = grid.analysis @ values
    return coeffs[0], coeffs[1:]


def verify_system(system: AbstractSystem, rng: Optional[np.random.Generator] = None,
                  samples: int = 3, tol: float = 1e-10) -> Dict:
    """Numerical check of N(0, mu) = 0 at random mu and D_x N(0, 0) = 0"""
    rng = rng or np.random.default_rng(RUN_SEED)
    zero = np.zeros(system.n)
    worst_value = max(np.linalg.norm(system.nonlinear(zero, float(mu))) for mu in rng.uniform(-0.1, 0.1, samples))
    jac = system.nonlinear_jacobian(zero, 0.0)
    worst_jac = float(abs(sp.csr_matrix(jac)).max()) if sp.csr_matrix(jac).nnz else 0.0
    passed = worst_value <= tol and worst_jac <= tol
    return {'passed': bool(passed), 'N_at_rest': float(worst_value), 'DN_at_rest': worst_jac,
            'message': 'N(0, mu) = 0 and D_x N(0, 0) = 0' if passed else 'nonlinearity does not vanish at rest'}


class HopfEngine:
    """Bordered harmonic-balance Newton solver for one system and basis"""

    def __init__(self, system: AbstractSystem, basis: OscBasis, kmax: int = BRANCH_KMAX,
                 tol: float = BRANCH_TOL, max_iter: int = BRANCH_MAX_ITER):
        self.system = system
        self.basis = basis
        self.grid = HarmonicGrid(kmax)
        self.tol = tol
        self.max_iter = max_iter
        n, m, R = system.n, system.m, self.grid.R
        self.sizes = (R * n, R * m)
        G = sp.csr_matrix(system.gram)
        self.G = G
        self.I_R = sp.identity(R, format='csr')
        self.GD = sp.kron(sp.csr_matrix(self.grid.derivative), G, format='csr')
        self.J0 = sp.kron(self.I_R, sp.csr_matrix(system.linear), format='csr')
        self.Cb = sp.kron(self.I_R, sp.csr_matrix(system.constraint), format='csr')
        self.An = sp.kron(sp.csr_matrix(self.grid.analysis), sp.identity(n), format='csr')
        self.Sy = sp.kron(sp.csr_matrix(self.grid.synthesis), sp.identity(n), format='csr')
        rows = []
        for adj in (basis.v1_adj, basis.v2_adj):
            full = self.grid.embed_first(adj)
            rows.append(np.concatenate([w * (G @ full[r]) for r, w in enumerate(self.grid.weights)]))
        self.side_rows = sp.csr_matrix(np.vstack(rows))

    def seed(self) -> Tuple[np.ndarray, np.ndarray, float, float]:
        """Linear prediction (X, P, zeta, mu) = (v1, p1, zeta0, 0)"""
        X = self.grid.embed_first(self.basis.v1)
        P = self.grid.embed_first(self.basis.p1) if self.system.m else np.zeros((self.grid.R, 0))
        return X, P, self.basis.zeta0, 0.0

    def _samples(self, X: np.ndarray) -> np.ndarray:
        return self.grid.synthesis @ X

    def residual(self, X, P, zeta, mu, eps) -> np.ndarray:
        sys_, g = self.system, self.grid
        samples = self._samples(X)
        Nt = np.vstack([sys_.scaled_nonlinear(samples[j], mu, eps) for j in range(g.Nt)])
        Nhat = g.analysis @ Nt
        x = X.reshape(-1)
        r_x = zeta * (self.GD @ x) + self.J0 @ x - Nhat.reshape(-1)
        if sys_.m:
            r_x = r_x + self.Cb.T @ P.reshape(-1)
        r_p = self.Cb @ x
        a, b = self.side_rows @ x
        return np.concatenate([r_x, r_p, [a - 1.0, b]])

    def bordered_jacobian(self, X, P, zeta, mu, eps) -> sp.csr_matrix:
        sys_, g = self.system, self.grid
        samples = self._samples(X)
        blocks = sp.block_diag([sys_.scaled_jacobian(samples[j], mu, eps) for j in range(g.Nt)], format='csr')
        A = zeta * self.GD + self.J0 - self.An @ blocks @ self.Sy
        x = X.reshape(-1)
        col_zeta = sp.csr_matrix((self.GD @ x)[:, None])
        dmu = np.vstack([sys_.scaled_dmu(samples[j], mu, eps) for j in range(g.Nt)])
        col_mu = sp.csr_matrix(-(g.analysis @ dmu).reshape(-1)[:, None])
        if sys_.m:
            top = [A, self.Cb.T, col_zeta, col_mu]
            mid = [self.Cb, None, None, None]
            bottom = [self.side_rows, None, None, None]
            return sp.bmat([top, mid, bottom], format='csr')
        return sp.bmat([[A, col_zeta, col_mu], [self.side_rows, None, None]], format='csr')

    def check_transversal(self) -> float:
        """(S011 v1|v1_adj) as a pairing of the weak matrix; equals Re nu'(0)"""
        S = sp.csr_matrix(self.system.s011)
        value = np.pi * (self.basis.v1_adj[0] @ (S @ self.basis.v1[0])
                         + self.basis.v1_adj[1] @ (S @ self.basis.v1[1]))
        if abs(value) < SINGULAR_TOL:
            raise SolverError("bordered system singular (check Re nu'(0) != 0)")
        return float(value)

    def _split(self, y):
        nX, nP = self.sizes
        R = self.grid.R
        X = y[:nX].reshape(R, self.system.n)
        P = y[nX:nX + nP].reshape(R, self.system.m)
        return X, P, y[nX + nP], y[nX + nP + 1]

    def solve(self, eps: float, seed: Optional[Tuple] = None) -> PeriodicBranchPoint:
        X, P, zeta, mu = seed if seed is not None else self.seed()
        y = np.concatenate([X.reshape(-1), P.reshape(-1), [zeta, mu]])
        F = self.residual(X, P, zeta, mu, eps)
        res = float(np.linalg.norm(F))
        iterations = 0
        while res >= self.tol:
            if iterations >= self.max_iter:
                raise SolverError(f"branch Newton did not converge at epsilon = {eps:g} (residual {res:.3e})",
                                  last_residual=res)
            Jb = self.bordered_jacobian(X, P, zeta, mu, eps)
            try:
                delta = splu(Jb.tocsc()).solve(-F)
            except RuntimeError as exc:
                raise SolverError("bordered system singular (check Re nu'(0) != 0)", last_residual=res) from exc
            y = y + delta
            X, P, zeta, mu = self._split(y)
            F = self.residual(X, P, zeta, mu, eps)
            res = float(np.linalg.norm(F))
            iterations += 1
            logger.debug("branch Newton %d at eps=%g: residual %.3e", iterations, eps, res)
            if not np.isfinite(res):
                raise SolverError(f"branch Newton diverged at epsilon = {eps:g}", last_residual=res)
        a, b = side_values(X, self.basis, self.G)
        return PeriodicBranchPoint(float(eps), float(mu), float(zeta), X.copy(), P.copy(), res, iterations,
                                   (float(eps * a), float(eps * b)), {'kmax': self.grid.kmax})


def newton_branch_point(system: AbstractSystem, basis: OscBasis, eps: float, seed=None,
                        kmax: int = BRANCH_KMAX, tol: float = BRANCH_TOL,
                        max_iter: int = BRANCH_MAX_ITER) -> PeriodicBranchPoint:
    engine = HopfEngine(system, basis, kmax, tol, max_iter)
    engine.check_transversal()
    return engine.solve(eps, seed)


def continue_branch(system: AbstractSystem, basis: OscBasis, eps_grid: Sequence[float],
                    kmax: int = BRANCH_KMAX, tol: float = BRANCH_TOL,
                    max_iter: int = BRANCH_MAX_ITER) -> List[PeriodicBranchPoint]:
    """March outward from epsilon = 0 in both directions; a failed step truncates that side"""
    engine = HopfEngine(system, basis, kmax, tol, max_iter)
    engine.check_transversal()
    origin = engine.solve(0.0)
    grid = sorted(set(float(e) for e in eps_grid))
    points = {0.0: origin} if 0.0 in grid else {}
    for side in ([e for e in grid if e > 0], sorted((e for e in grid if e < 0), reverse=True)):
        prev = origin
        for eps in side:
            try:
                prev = engine.solve(eps, (prev.X, prev.P, prev.zeta, prev.mu))
            except SolverError as exc:
                logger.warning("Branch truncated at epsilon = %g: %s", eps, exc)
                break
            points[eps] = prev
            logger.info("Branch point eps=%g: mu=%.6e zeta=%.8f (%d iterations)",
                        eps, prev.mu, prev.zeta, prev.iterations)
    return [points[e] for e in sorted(points)]


def classify_criticality(branch: Sequence[PeriodicBranchPoint], noise_floor: float = BRANCH_NOISE_FLOOR) -> Dict:
    """Fit mu = mu1 eps^2 + mu2 eps^4; the sign of the first coefficient above the floor decides"""
    if len(branch) < 4:
        raise ValidationError("criticality needs at least 4 branch points")
    eps = np.array([p.epsilon for p in branch])
    mu = np.array([p.mu for p in branch])
    design = np.column_stack([eps ** 2, eps ** 4])
    model = LinearRegression(fit_intercept=False).fit(design, mu)
    mu1, mu2 = (float(c) for c in model.coef_)
    residual = float(np.max(np.abs(model.predict(design) - mu))) if len(mu) else 0.0

    order, leading = None, 0.0
    for k, coef in ((1, mu1), (2, mu2)):
        if abs(coef) > noise_floor:
            order, leading = k, coef
            break
    if order is None:
        classification = 'degenerate'
    else:
        classification = 'supercritical' if leading > 0 else 'subcritical'
    return {'classification': classification, 'mu1': mu1, 'mu2': mu2, 'order': order,
            'fit_residual': residual, 'points': len(branch)}


def parity_defect(branch: Sequence[PeriodicBranchPoint]) -> Dict:
    """max |zeta(eps) - zeta(-eps)| and |mu(eps) - mu(-eps)| over mirrored grid points"""
    by_eps = {round(p.epsilon, 14): p for p in branch}
    dz, dm = 0.0, 0.0
    for e, p in by_eps.items():
        q = by_eps.get(round(-e, 14))
        if q is not None and e > 0:
            dz = max(dz, abs(p.zeta - q.zeta))
            dm = max(dm, abs(p.mu - q.mu))
    return {'zeta': dz, 'mu': dm}


def floquet_null_space(system: AbstractSystem, basis: OscBasis, iterations: int = 4,
                       seed: int = RUN_SEED) -> Dict:
    """
    Two-dimensional null space of the first-harmonic block
        [[J0, zeta0 G], [-zeta0 G, J0]]
    by subspace inverse iteration, compared with span{v1, v2} through Gram projectors
    """
    n, m = system.n, system.m
    z0 = basis.zeta0
    G = sp.csr_matrix(system.gram)
    J0 = sp.csr_matrix(system.linear)
    Q = sp.bmat([[J0, z0 * G], [-z0 * G, J0]], format='csr')
    G2 = sp.block_diag([G, G], format='csr')
    if m:
        C2 = sp.block_diag([system.constraint, system.constraint], format='csr')
        K = sp.bmat([[Q, C2.T], [C2, None]], format='csc')
        B = sp.block_diag([G2, sp.csr_matrix((2 * m, 2 * m))], format='csr')
    else:
        K, B = Q.tocsc(), G2
    shift = 1e-10 * max(1.0, abs(z0))
    lu = splu((K - shift * B).tocsc())
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((K.shape[0], 2))
    for _ in range(iterations):
        Z = np.column_stack([lu.solve(B @ Z[:, j]) for j in range(2)])
        Z, _ = np.linalg.qr(Z)
    W = Z[:2 * n]
    V = np.column_stack([basis.v1.reshape(-1), basis.v2.reshape(-1)])

    def orthonormal(M):
        # G-orthonormal columns via the Cholesky factor of the small Gram block
        L = np.linalg.cholesky(M.T @ (G2 @ M))
        return np.linalg.solve(L, M.T).T

    # sine of the largest principal angle = norm of the projector difference
    cosines = np.linalg.svd(orthonormal(W).T @ (G2 @ orthonormal(V)), compute_uv=False)
    distance = float(np.sqrt(max(0.0, 1.0 - cosines.min() ** 2)))
    return {'basis': W, 'projector_distance': distance, 'passed': distance < 1e-6}
