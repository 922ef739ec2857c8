"""
Fourier-mode problems of the linear time-periodic FSI system
Oscillatory mode solutions h_k^(m), the traction matrix K(k), the resonance matrix M(k),
forced responses, the full linear periodic solve, energy identities and the mass-ratio scan
"""
import logging
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from skfem import condense
from sklearn.linear_model import LinearRegression

from src.discretization import DiscreteOperators, saddle_matrix
from src.errors import SolverError, ValidationError

logger = logging.getLogger(__name__)

K_SINGULAR_TOL = 1e-12
ZERO_MEAN_TOL = 1e-14


@dataclass
class ModeSolution:
    """Mode field with body trace zeta0 e_m"""

    k: int
    m: int
    h: np.ndarray
    p: np.ndarray
    residual: float
    norms: Dict[str, float] = field(default_factory=dict)

    def conj(self) -> 'ModeSolution':
        return ModeSolution(-self.k, self.m, np.conj(self.h), np.conj(self.p), self.residual, dict(self.norms))


@dataclass
class KMatrix:
    k: int
    zeta0: float
    lam_o: float
    entries: np.ndarray

    @property
    def min_singular_value(self) -> float:
        return float(np.linalg.svd(self.entries, compute_uv=False).min())


@dataclass
class ResonanceMatrix:
    k: int
    entries: np.ndarray
    min_singular_value: float
    condition_number: float


@dataclass
class FourierModeSet:
    """Per-k coefficients for k = 1..kmax; negative k are conjugates, k = 0 is zero"""

    kmax: int
    w: Dict[int, np.ndarray] = field(default_factory=dict)
    q: Dict[int, np.ndarray] = field(default_factory=dict)
    xi: Dict[int, np.ndarray] = field(default_factory=dict)
    residuals: Dict[int, float] = field(default_factory=dict)

    def coefficient(self, name: str, k: int):
        table = getattr(self, name)
        if k == 0 or abs(k) not in table:
            sample = next(iter(table.values()), np.zeros(0))
            return np.zeros_like(sample)
        value = table[abs(k)]
        return value if k > 0 else np.conj(value)


def _positive_modes(data: Optional[Mapping], name: str, kmax: int, size: int) -> Dict[int, np.ndarray]:
    """Zero-mean, conjugate-symmetric per-k data reduced to k = 1..kmax"""
    out = {k: np.zeros(size, dtype=complex) for k in range(1, kmax + 1)}
    if not data:
        return out
    data = {int(k): np.asarray(v, dtype=complex) for k, v in data.items()}
    if 0 in data and np.abs(data[0]).max(initial=0.0) > ZERO_MEAN_TOL:
        raise ValidationError(f"{name} must have zero average")
    for k, v in data.items():
        if k == 0:
            continue
        if abs(k) > kmax:
            raise ValidationError(f"{name} has mode k = {k} beyond kmax = {kmax}")
        if v.shape != (size,):
            raise ValidationError(f"{name}[{k}] must have {size} entries")
        if k < 0:
            if -k in data and np.abs(data[-k] - np.conj(v)).max() > 1e-12 * max(1.0, np.abs(v).max()):
                raise ValidationError(f"{name} is not conjugate-symmetric at k = {-k}")
            if -k not in data:
                out[-k] = np.conj(v)
        else:
            out[k] = v
    return out


class ModeSolver:
    """Mode problems about the rest state at (zeta0, lambda_o) on one discretization"""

    def __init__(self, ops: DiscreteOperators, zeta0: float, lam_o: float, jobs: int = 1):
        if zeta0 == 0:
            raise ValidationError("zeta0 must be nonzero")
        self.ops = ops
        self.space = ops.space
        self.zeta0 = float(zeta0)
        self.lam_o = float(lam_o)
        self.jobs = max(1, int(jobs))
        self.nu = self.space.d * self.space.Nu
        self.dirichlet = self.space.dirichlet_dofs
        self._factors: Dict[int, tuple] = {}
        self._modes: Dict[tuple, ModeSolution] = {}

    def velocity_block(self, k: int) -> sp.csr_matrix:
        """Z_k = i k zeta0 M + A - lambda_o T1"""
        ops = self.ops
        return (1j * k * self.zeta0 * ops.mass + ops.diffusion - self.lam_o * ops.transport1).tocsr()

    def _factor(self, k: int):
        if k not in self._factors:
            K = saddle_matrix(self.space, self.velocity_block(k), self.ops.divergence).astype(complex)
            rhs = np.zeros(K.shape[0], dtype=complex)
            Acond, _, _, I = condense(K, rhs, D=self.dirichlet)
            try:
                lu = splu(Acond.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"mode system singular at k = {k}; check mesh resolution and truncation "
                                  f"radius") from exc
            self._factors[k] = (K, lu, I)
        return self._factors[k]

    def solve_with_boundary(self, k: int, body_values: np.ndarray, load: Optional[np.ndarray] = None):
        """Velocity/pressure with body trace body_values, zero inflow, and optional velocity load"""
        K, lu, I = self._factor(k)
        x = np.zeros(K.shape[0], dtype=complex)
        x[:self.nu] = self.space.boundary_field(np.asarray(body_values, dtype=complex))
        b = np.zeros(K.shape[0], dtype=complex)
        if load is not None:
            b[:self.nu] = load
        b_I = b[I] - K[I][:, self.dirichlet] @ x[self.dirichlet]
        x[I] = lu.solve(b_I)
        r = (K @ x - b)[I]
        residual = float(np.linalg.norm(r) / max(np.linalg.norm(b_I), 1e-300))
        return x[:self.nu], x[self.nu:], residual

    def solve_mode(self, k: int, m: int) -> ModeSolution:
        if k == 0:
            zero = ModeSolution(0, m, np.zeros(self.nu, dtype=complex), np.zeros(self.space.Np, dtype=complex), 0.0)
            return zero
        if not 0 <= m < self.space.d:
            raise ValidationError(f"direction index m must be in 0..{self.space.d - 1}")
        if k < 0:
            return self.solve_mode(-k, m).conj()
        key = (k, m)
        if key not in self._modes:
            e = np.zeros(self.space.d)
            e[m] = self.zeta0
            h, p, residual = self.solve_with_boundary(k, e)
            sol = ModeSolution(k, m, h, p, residual, self.ops.field_norms(h))
            logger.debug("Mode k=%d m=%d: residual %.2e", k, m, residual)
            self._modes[key] = sol
        return self._modes[key]

    def solve_modes(self, ks: Sequence[int]) -> Dict[tuple, ModeSolution]:
        """All directions for each positive k, one factorization per k, k in parallel"""
        ks = sorted({abs(int(k)) for k in ks if k != 0})

        def per_k(k):
            return [self.solve_mode(k, m) for m in range(self.space.d)]

        with ThreadPool(self.jobs) as pool:
            results = pool.map(per_k, ks)
        return {(s.k, s.m): s for group in results for s in group}

    def traction(self, k: int, w: np.ndarray, p: np.ndarray, load: Optional[np.ndarray] = None) -> np.ndarray:
        extra = 1j * k * self.zeta0 * (self.ops.mass @ w) - self.lam_o * (self.ops.transport1 @ w)
        if load is not None:
            extra = extra - load
        return self.ops.traction(w, p, extra)

    def K_matrix(self, k: int) -> KMatrix:
        if k == 0:
            raise ValidationError("K matrix is defined for k != 0")
        if k < 0:
            Kp = self.K_matrix(-k)
            return KMatrix(k, self.zeta0, self.lam_o, np.conj(Kp.entries))
        d = self.space.d
        entries = np.zeros((d, d), dtype=complex)
        for m in range(d):
            mode = self.solve_mode(k, m)
            entries[:, m] = self.traction(k, mode.h, mode.p)
        Km = KMatrix(k, self.zeta0, self.lam_o, entries)
        smin = Km.min_singular_value
        if smin < K_SINGULAR_TOL:
            logger.warning("K(%d) nearly singular (min singular value %.2e): discretization failure", k, smin)
        return Km

    def modes_report(self, kmax: int) -> List[Dict]:
        rows = []
        for k in range(1, kmax + 1):
            for m in range(self.space.d):
                s = self.solve_mode(k, m)
                rows.append({'k': k, 'm': m, **s.norms, 'residual': s.residual})
        return rows


def assemble_K_matrix(solver: ModeSolver, k: int) -> KMatrix:
    return solver.K_matrix(k)


def assemble_M(k: int, zeta0: float, A: np.ndarray, varpi: float, K: KMatrix) -> ResonanceMatrix:
    """M(k) = A - k^2 zeta0^2 I + i k varpi K(k)"""
    A = np.asarray(A, dtype=float)
    M = A - (k * zeta0) ** 2 * np.eye(A.shape[0]) + 1j * k * varpi * K.entries
    s = np.linalg.svd(M, compute_uv=False)
    cond = float(s.max() / s.min()) if s.min() > 0 else np.inf
    return ResonanceMatrix(k, M, float(s.min()), cond)


def forced_response(solver: ModeSolver, F: Mapping, A: np.ndarray, varpi: float, kmax: int) -> FourierModeSet:
    """xi_k = M(k)^{-1} F_k, w_k = sum_m i k xi_km h_k^(m)"""
    d = solver.space.d
    Fk = _positive_modes(F, 'forcing', kmax, d)
    out = FourierModeSet(kmax)
    for k in range(1, kmax + 1):
        if not np.any(Fk[k]):
            out.w[k] = np.zeros(solver.nu, dtype=complex)
            out.q[k] = np.zeros(solver.space.Np, dtype=complex)
            out.xi[k] = np.zeros(d, dtype=complex)
            out.residuals[k] = 0.0
            continue
        M = assemble_M(k, solver.zeta0, A, varpi, solver.K_matrix(k))
        xi = np.linalg.solve(M.entries, Fk[k])
        modes = [solver.solve_mode(k, m) for m in range(d)]
        out.w[k] = sum(1j * k * xi[m] * modes[m].h for m in range(d))
        out.q[k] = sum(1j * k * xi[m] * modes[m].p for m in range(d))
        out.xi[k] = xi
        out.residuals[k] = float(np.linalg.norm(M.entries @ xi - Fk[k]) / np.linalg.norm(Fk[k]))
    return out


def full_linear_tp_solve(solver: ModeSolver, f: Optional[Mapping], F: Optional[Mapping], G: Optional[Mapping],
                         A: np.ndarray, varpi: float, kmax: int, tol: float = 1e-9) -> FourierModeSet:
    """
    Per mode: fluid forcing f_k, rigid forcing F_k and body data G_k, with
    w = i k zeta0 xi - G_k on the body. The lifted part z carries f and -G; the
    rigid system M(k) xi = F_k - varpi traction(z) closes the problem.
    """
    d = solver.space.d
    fk = _positive_modes(f, 'fluid forcing', kmax, solver.nu)
    Fk = _positive_modes(F, 'forcing', kmax, d)
    Gk = _positive_modes(G, 'boundary data', kmax, d)
    A = np.asarray(A, dtype=float)
    out = FourierModeSet(kmax)
    for k in range(1, kmax + 1):
        load = solver.ops.mass @ fk[k]
        z, pz, _ = solver.solve_with_boundary(k, -Gk[k], load)
        Fz = Fk[k] - varpi * solver.traction(k, z, pz, load)
        M = assemble_M(k, solver.zeta0, A, varpi, solver.K_matrix(k))
        xi = np.linalg.solve(M.entries, Fz)
        modes = [solver.solve_mode(k, m) for m in range(d)]
        w = z + sum(1j * k * xi[m] * modes[m].h for m in range(d))
        q = pz + sum(1j * k * xi[m] * modes[m].p for m in range(d))
        residual = _coupled_residual(solver, k, w, q, xi, fk[k], Fk[k], Gk[k], A, varpi)
        if residual > tol:
            raise SolverError(f"periodic solve residual {residual:.2e} at k = {k}", last_residual=residual)
        out.w[k], out.q[k], out.xi[k], out.residuals[k] = w, q, xi, residual
    return out


def _coupled_residual(solver, k, w, q, xi, f, F, G, A, varpi) -> float:
    ops, space = solver.ops, solver.space
    load = ops.mass @ f
    r_mom = solver.velocity_block(k) @ w + ops.divergence.T @ q - load
    free = np.setdiff1d(np.arange(solver.nu), solver.dirichlet)
    trace = np.array([w[a * space.Nu + space.body_dofs] - (1j * k * solver.zeta0 * xi[a] - G[a])
                      for a in range(space.d)])
    rigid = (A - (k * solver.zeta0) ** 2 * np.eye(space.d)) @ xi + varpi * space.body_indicator.T @ r_mom - F
    parts = [np.linalg.norm(r_mom[free]), np.abs(trace).max(), np.linalg.norm(rigid),
             np.linalg.norm(ops.divergence @ w)]
    scale = max(np.linalg.norm(load) + np.linalg.norm(F) + np.linalg.norm(G), 1e-300)
    return float(sum(parts) / scale)


def energy_identity_report(solver: ModeSolver, k: int, alphas: np.ndarray, varpi: float = 1.0,
                           A: Optional[np.ndarray] = None) -> Dict:
    """
    zeta0^p a^H K a = i k zeta0 |h|^2 + c_D |D(h)|^2 - lambda_o (d1 h, h) with h = sum a_m h^(m).
    Resolves c_D and the power p, and evaluates the forced-response identity
    2 k varpi zeta0^-1 |D(sum xi_m h^(m))|^2 = Im(xi^H F).
    """
    ops = solver.ops
    Km = solver.K_matrix(k).entries
    modes = [solver.solve_mode(k, m) for m in range(solver.space.d)]
    rows = []
    for alpha in np.atleast_2d(alphas):
        h = sum(alpha[m] * modes[m].h for m in range(len(modes)))
        aKa = np.vdot(alpha, Km @ alpha)
        mass = np.vdot(h, ops.mass @ h).real
        transport = np.vdot(h, ops.transport1 @ h)
        strain = ops.strain_energy(h)
        rows.append({'aKa': aKa, 'mass': mass, 'transport': transport, 'strain': strain,
                     'skew_defect': abs(transport.real)})

    candidates = {}
    for power in (1, 2):
        cds = [((solver.zeta0 ** power) * r['aKa'] - 1j * k * solver.zeta0 * r['mass']
                + solver.lam_o * r['transport']).real / r['strain'] for r in rows]
        cd = float(np.median(cds))
        mismatch = max(abs((solver.zeta0 ** power) * r['aKa'] - (1j * k * solver.zeta0 * r['mass'] + cd * r['strain']
                                                                 - solver.lam_o * r['transport']))
                       / max(abs((solver.zeta0 ** power) * r['aKa']), 1e-300) for r in rows)
        candidates[power] = {'c_D': cd, 'mismatch': float(mismatch)}
    power = min(candidates, key=lambda p: candidates[p]['mismatch'])
    c_D = candidates[power]['c_D']

    report = {
        'k': k,
        'zeta_power': power,
        'c_D': c_D,
        'c_D_is_two': bool(abs(c_D - 2.0) < 1e-6),
        'mismatch': candidates[power]['mismatch'],
        'candidates': candidates,
        'skew_defect': float(max(r['skew_defect'] for r in rows)),
        'samples': len(rows),
    }
    if A is not None:
        rng = np.random.default_rng(k)
        F = rng.standard_normal(solver.space.d) + 1j * rng.standard_normal(solver.space.d)
        M = assemble_M(k, solver.zeta0, A, varpi, solver.K_matrix(k))
        xi = np.linalg.solve(M.entries, F)
        h = sum(xi[m] * modes[m].h for m in range(len(modes)))
        lhs = 2.0 * k * varpi / solver.zeta0 * ops.strain_energy(h)
        rhs = float(np.vdot(xi, F).imag)
        report['forced_identity'] = {'lhs': lhs, 'rhs': rhs,
                                     'mismatch': abs(lhs - rhs) / max(abs(rhs), 1e-300)}
    return report


def growth_report(solver: ModeSolver, ks: Sequence[int]) -> Dict:
    """|grad h_k| / (|k|+1)^(1/2) and broken |D^2 h_k| / (|k|+1) over k; spread = max/min"""
    grad, hess = [], []
    for k in ks:
        g = max(solver.solve_mode(k, m).norms['H1'] for m in range(solver.space.d))
        h = max(solver.solve_mode(k, m).norms['D2'] for m in range(solver.space.d))
        grad.append(g / np.sqrt(abs(k) + 1))
        hess.append(h / (abs(k) + 1))
    return {'k': list(ks), 'grad_ratio': grad, 'hess_ratio': hess,
            'grad_spread': float(max(grad) / min(grad)), 'hess_spread': float(max(hess) / min(hess))}


def resonance_scan(solver: ModeSolver, varpi_grid: Sequence[float], A: np.ndarray, F: np.ndarray,
                   kmax: int = 8, kbar: Optional[int] = None) -> Dict:
    """
    |xi_kbar|(varpi) at the resonant wavenumber kbar = omega_n / zeta0, the log-log slope,
    the measured and direct prefactors, and min singular values of M(k) for every k
    """
    A = np.asarray(A, dtype=float)
    omegas = np.sqrt(np.linalg.eigvalsh(A))
    omega = float(omegas[0])
    ratio = omega / solver.zeta0
    if kbar is None:
        kbar = max(1, int(round(ratio)))
    exact = abs(kbar * solver.zeta0 - omega) <= 1e-9 * max(1.0, omega)
    if not exact:
        logger.warning("No integer k satisfies k zeta0 = omega_n (ratio %.6g); scanning nearest k = %d", ratio, kbar)

    K = solver.K_matrix(kbar)
    KinvF = float(np.linalg.norm(np.linalg.solve(K.entries, F)))
    rows, min_sv = [], {}
    for varpi in varpi_grid:
        M = assemble_M(kbar, solver.zeta0, A, varpi, K)
        xi = np.linalg.solve(M.entries, F)
        rows.append({'varpi': float(varpi), 'k': kbar, 'xi_abs': float(np.linalg.norm(xi)),
                     'min_singular_value': M.min_singular_value})
        min_sv[float(varpi)] = min(assemble_M(k, solver.zeta0, A, varpi, solver.K_matrix(k)).min_singular_value
                                   for k in range(1, kmax + 1))

    x = np.log(np.array([r['varpi'] for r in rows]))[:, None]
    y = np.log(np.array([r['xi_abs'] for r in rows]))
    fit = LinearRegression().fit(x, y)
    slope = float(fit.coef_[0])
    measured = [r['xi_abs'] * r['varpi'] / KinvF for r in rows]
    return {
        'kbar': kbar,
        'exact_resonance': bool(exact),
        'omega_n': omega,
        'rows': rows,
        'slope': slope,
        'intercept': float(fit.intercept_),
        'prefactor_measured': float(measured[0]),
        'prefactor_direct': float(1.0 / kbar),
        'prefactor_printed': float(np.sqrt(solver.zeta0) / omega),
        'min_singular_values': min_sv,
    }
