"""
IMEX time integration of the perturbation system G x' + J x + C^T p = N(x)
Crank-Nicolson on the linear Stokes/coupling part, Adams-Bashforth on the quadratic convection
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.signal import hilbert
from scipy.sparse.linalg import splu
from sklearn.linear_model import LinearRegression

from config.settings import SIMULATE_BLOWUP, SIMULATE_CFL_MAX, SIMULATE_WINDOW
from src.errors import SolverError, ValidationError
from src.hopf_engine import AbstractSystem
from src.linear_operators import leray_project

logger = logging.getLogger(__name__)

DIVERGENCE_TOL = 1e-10
ZERO_PAD = 8
TRIM_FRACTION = 0.1


@dataclass
class Trajectory:
    """Sampled history of one simulation"""

    t: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    force: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    balance_defect: np.ndarray
    divergence: np.ndarray
    final_state: np.ndarray
    dt: float
    lam: float
    snapshots: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    signal_name: str = 'x0'
    max_cfl: float = 0.0

    @property
    def final_time(self) -> float:
        return float(self.t[-1])

    @property
    def signal(self) -> np.ndarray:
        """Scalar signal used for amplitude and frequency"""
        if self.signal_name == 'lift':
            return -self.force[:, 1]
        if self.signal_name.startswith('eta'):
            return self.eta[:, int(self.signal_name[3:])]
        return self.eta[:, 0]

    def rows(self):
        for i in range(self.t.size):
            yield [self.t[i], *self.eta[i], *self.sigma[i], *self.force[i], self.energy[i]]

    def header(self) -> List[str]:
        d_eta, d_force = self.eta.shape[1], self.force.shape[1]
        return (['t'] + [f'eta{a}' for a in range(d_eta)] + [f'sigma{a}' for a in range(d_eta)]
                + [f'force{a}' for a in range(d_force)] + ['energy'])


class ImexStepper:
    """[[G/dt + J/2, C^T], [C, 0]] factored once; the explicit term is AB2 (Euler on the first step)"""

    def __init__(self, system: AbstractSystem, dt: float, mu: float = 0.0):
        if dt <= 0:
            raise ValidationError("simulate.dt must be positive")
        self.system = system
        self.dt = float(dt)
        self.mu = float(mu)
        self.G = sp.csr_matrix(system.gram)
        self.C = sp.csr_matrix(system.constraint)
        dmu = sp.csr_matrix(system.jacobian_at_rest_dmu(0.0))
        self._dmu = dmu
        self.J = (sp.csr_matrix(system.linear) - self.mu * dmu).tocsr()
        self.m = self.C.shape[0]
        K = (self.G / self.dt + 0.5 * self.J).tocsc()
        if self.m:
            K = sp.bmat([[K, self.C.T], [self.C, None]], format='csc')
        try:
            self._lu = splu(K)
        except RuntimeError as exc:
            raise SolverError("time-step system singular") from exc
        self._explicit = (self.G / self.dt - 0.5 * self.J).tocsr()

    def explicit_term(self, x: np.ndarray) -> np.ndarray:
        """N(x) with the mu-linear part moved into the implicit operator"""
        return self.system.nonlinear(x, self.mu) - self.mu * (self._dmu @ x)

    def step(self, x: np.ndarray, q_now: np.ndarray, q_prev: Optional[np.ndarray]):
        q_hat = q_now if q_prev is None else 1.5 * q_now - 0.5 * q_prev
        rhs = self._explicit @ x + q_hat
        if self.m:
            rhs = np.concatenate([rhs, np.zeros(self.m)])
        y = self._lu.solve(rhs)
        n = self.system.n
        return y[:n], y[n:], q_hat

    def energy(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.G @ x))


def _rigid_parts(system: AbstractSystem, x: np.ndarray):
    space = getattr(getattr(system, 'ops', None), 'space', None)
    if space is None:
        return x[:1], x[1:2] if x.size > 1 else np.zeros(1)
    return x[space.eta], x[space.sigma]


def _fsi_force(system, x0: np.ndarray, x1: np.ndarray, p: np.ndarray, dt: float) -> np.ndarray:
    """Fluid traction on the body from the discrete momentum residual at the half step"""
    ops = system.ops
    space = ops.space
    P, Pc = space.prolongation, space.constant_extension
    lam = system.lam_o
    state = system.problem.steady(lam)
    xm = 0.5 * (x0 + x1)
    w = P @ xm
    lin = (-lam * (ops.transport1 @ w) + lam * (ops.convection(state.velocity) @ w)
           + lam * (ops.reaction(state.velocity) @ ((P - Pc) @ xm)))
    quad = lam * (ops.convection((P - Pc) @ xm) @ w)
    extra = ops.mass @ (P @ (x1 - x0)) / dt + lin + quad
    return ops.traction(w, p, extra)


def _h_min(system) -> Optional[float]:
    problem = getattr(system, 'problem', None)
    if problem is None:
        return None
    measures = np.abs(problem.mesh.cell_measures())
    return float(np.min(measures) ** (1.0 / problem.mesh.dimension))


def default_signal(system: AbstractSystem, eta: np.ndarray) -> str:
    space = getattr(getattr(system, 'ops', None), 'space', None)
    if space is not None and space.fixed_body:
        return 'lift'
    if eta.shape[1] == 0:
        return 'x0'
    return f'eta{int(np.argmax(np.var(eta, axis=0)))}'


def simulate(system: AbstractSystem, init: np.ndarray, t_final: float, dt: float, stride: int = 0,
             mu: float = 0.0, blowup: float = SIMULATE_BLOWUP, cfl_max: float = SIMULATE_CFL_MAX,
             force: Optional[Callable] = None) -> Trajectory:
    """
    Integrate from the projected initial state up to t_final.
    Raises SolverError carrying the last valid time on blow-up.
    """
    if t_final <= 0:
        raise ValidationError("simulate.t_final must be positive")
    stepper = ImexStepper(system, dt, mu)
    steps = int(round(t_final / dt))
    if steps < 1:
        raise ValidationError("simulate.t_final shorter than one time step")
    if force is None and hasattr(system, 'ops') and hasattr(system, 'problem'):
        force = _fsi_force
    h_min = _h_min(system)
    lam = float(getattr(system, 'lam_o', getattr(system, 'lam_c', 0.0) + mu))

    x = np.asarray(init, dtype=float).copy()
    if stepper.m and hasattr(system, 'ops'):
        x = leray_project(system.ops, x)
    eta0, sigma0 = _rigid_parts(system, x)
    d_force = system.ops.space.d if (force is not None and hasattr(system, 'ops')) else 1

    t_rec, eta_rec, sigma_rec, force_rec = [0.0], [eta0.copy()], [sigma0.copy()], [np.zeros(d_force)]
    energy_rec, diss_rec, defect_rec = [stepper.energy(x)], [0.0], [0.0]
    div_rec = [float(np.abs(stepper.C @ x).max()) if stepper.m else 0.0]
    snapshots = [(0.0, x.copy())] if stride else []
    q_prev = None
    max_cfl = 0.0
    warned_div = warned_cfl = False

    for i in range(1, steps + 1):
        t_valid = (i - 1) * dt
        q_now = stepper.explicit_term(x)
        x_new, p, q_hat = stepper.step(x, q_now, q_prev)
        if not np.all(np.isfinite(x_new)) or np.abs(x_new).max() > blowup:
            exc = SolverError(f"blow-up at t = {i * dt:.6g}; last valid time {t_valid:.6g}")
            exc.last_valid_time = t_valid
            raise exc

        xm = 0.5 * (x + x_new)
        e_new = stepper.energy(x_new)
        diss = float(xm @ (stepper.J @ xm))
        work = float(xm @ q_hat)
        rate = (e_new - energy_rec[-1]) / dt
        scale = max(abs(rate), abs(diss), abs(work), 1e-300)
        defect_rec.append(abs(rate + diss - work) / scale if scale > 1e-300 else 0.0)

        div = float(np.abs(stepper.C @ x_new).max()) if stepper.m else 0.0
        if div > DIVERGENCE_TOL * max(1.0, np.abs(x_new).max()) and not warned_div:
            logger.warning("Divergence residual %.3e exceeds %.0e at t = %.4g", div, DIVERGENCE_TOL, i * dt)
            warned_div = True
        if h_min is not None:
            cfl = abs(lam) * dt * float(np.abs(system.ops.space.field(x_new)).max()) / h_min
            max_cfl = max(max_cfl, cfl)
            if cfl > cfl_max and not warned_cfl:
                logger.warning("Explicit convection CFL %.3g exceeds %.3g at t = %.4g", cfl, cfl_max, i * dt)
                warned_cfl = True

        f = force(system, x, x_new, p, dt) if force is not None else np.zeros(d_force)
        eta, sigma = _rigid_parts(system, x_new)
        t_rec.append(i * dt)
        eta_rec.append(eta.copy())
        sigma_rec.append(sigma.copy())
        force_rec.append(np.asarray(f, dtype=float))
        energy_rec.append(e_new)
        diss_rec.append(diss)
        div_rec.append(div)
        if stride and i % stride == 0:
            snapshots.append((i * dt, x_new.copy()))
        q_prev, x = q_now, x_new

    eta_arr = np.array(eta_rec)
    traj = Trajectory(t=np.array(t_rec), eta=eta_arr, sigma=np.array(sigma_rec), force=np.array(force_rec),
                      energy=np.array(energy_rec), dissipation=np.array(diss_rec),
                      balance_defect=np.array(defect_rec), divergence=np.array(div_rec), final_state=x,
                      dt=float(dt), lam=lam, snapshots=snapshots,
                      signal_name=default_signal(system, eta_arr), max_cfl=max_cfl)
    logger.info("Simulated %d steps to t = %.4g (final energy %.3e)", steps, traj.final_time, energy_rec[-1])
    return traj


def energy_balance(traj: Trajectory) -> Dict:
    """Discrete energy identity dE/dt + x.Jx = x.N over every step"""
    worst = float(traj.balance_defect.max()) if traj.balance_defect.size else 0.0
    return {'max_relative_defect': worst, 'passed': worst < 1e-8,
            'message': 'energy balance holds' if worst < 1e-8 else f'energy balance defect {worst:.3e}'}


def kinematic_defect(traj: Trajectory) -> Dict:
    """eta' = sigma: trapezoidal form (exact up to round-off) and centred differences"""
    if traj.eta.shape[1] == 0 or traj.t.size < 3:
        return {'trapezoidal': 0.0, 'centred': 0.0}
    dt = traj.dt
    scale = max(1e-300, float(np.abs(traj.sigma).max()))
    trap = (traj.eta[1:] - traj.eta[:-1]) / dt - 0.5 * (traj.sigma[1:] + traj.sigma[:-1])
    cent = (traj.eta[2:] - traj.eta[:-2]) / (2 * dt) - traj.sigma[1:-1]
    return {'trapezoidal': float(np.abs(trap).max() / scale), 'centred': float(np.abs(cent).max() / scale)}


def refinement_order(states: Sequence[np.ndarray], gram=None) -> float:
    """Observed order from final states at dt, dt/2, dt/4"""
    if len(states) != 3:
        raise ValidationError("refinement_order needs states at dt, dt/2 and dt/4")

    def norm(v):
        return float(np.sqrt(abs(v @ (gram @ v)))) if gram is not None else float(np.linalg.norm(v))

    e1, e2 = norm(states[0] - states[1]), norm(states[1] - states[2])
    if e2 == 0.0:
        return float('inf')
    return float(np.log2(e1 / e2))


def _is_oscillatory(y: np.ndarray) -> bool:
    centred = y - y.mean()
    if np.abs(centred).max() <= 1e-14 * max(1.0, np.abs(y).max()):
        return False
    crossings = np.count_nonzero(np.diff(np.signbit(centred)))
    return crossings >= 4


def dominant_frequency(t: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Angular frequency of the FFT peak, Hann window, zero padding and parabolic refinement"""
    if t.size < 8 or not _is_oscillatory(y):
        return None
    dt = float(t[1] - t[0])
    yc = (y - y.mean()) * np.hanning(y.size)
    n = ZERO_PAD * y.size
    spectrum = np.abs(np.fft.rfft(yc, n))
    k = int(np.argmax(spectrum[1:])) + 1
    if k >= spectrum.size - 1:
        return None
    a, b, c = np.log(spectrum[k - 1:k + 2] + 1e-300)
    denom = a - 2 * b + c
    offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
    return float(2 * np.pi * (k + offset) / (n * dt))


def growth_rate(t: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Slope of the log Hilbert envelope, edges trimmed"""
    if t.size < 16 or not _is_oscillatory(y):
        return None
    env = np.abs(hilbert(y - y.mean()))
    cut = int(TRIM_FRACTION * t.size)
    tt, ee = t[cut:t.size - cut], env[cut:t.size - cut]
    keep = ee > 0
    if np.count_nonzero(keep) < 4:
        return None
    model = LinearRegression().fit(tt[keep].reshape(-1, 1), np.log(ee[keep]))
    return float(model.coef_[0])


def observables(t: np.ndarray, y: np.ndarray, window: float = SIMULATE_WINDOW) -> Dict:
    """Amplitude over the trailing window, frequency and envelope growth rate"""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    if t.size != y.size:
        raise ValidationError("time and signal lengths differ")
    start = int((1.0 - window) * t.size)
    tail = y[start:]
    amplitude = float(0.5 * (tail.max() - tail.min())) if tail.size else 0.0
    frequency = dominant_frequency(t[start:], tail)
    if frequency is None:
        frequency = dominant_frequency(t, y)
    return {'amplitude': amplitude, 'frequency': frequency, 'growth_rate': growth_rate(t, y),
            'oscillatory': frequency is not None}
