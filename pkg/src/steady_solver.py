"""
Steady equilibrium branch
Newton iteration with continuation in lambda, and the branch derivative du0/dlambda
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from skfem import condense

from config.settings import STEADY_MAX_ITER, STEADY_MIN_STEP, STEADY_TOL_NEWTON
from src.core_model import ModelParams
from src.discretization import DiscreteOperators, DiscreteSpace, saddle_matrix
from src.errors import SolverError, ValidationError

logger = logging.getLogger(__name__)


@dataclass
class SteadyState:
    """Equilibrium (u0, p0, chi0) at one lambda"""

    lam: float
    velocity: np.ndarray
    pressure: np.ndarray
    chi0: np.ndarray
    traction: np.ndarray
    residual_norm: float
    newton_iterations: int

    @property
    def drag(self) -> float:
        return float(self.traction[0])

    @property
    def lift(self) -> float:
        return float(-self.traction[1])


@dataclass
class BranchDerivative:
    """(u0', p0', chi0') = d/dlambda of a SteadyState"""

    velocity: np.ndarray
    pressure: np.ndarray
    chi0: np.ndarray
    residual_norm: float


class SteadySolver:
    """Newton solver for the equilibrium problem on a fixed discretization"""

    def __init__(self, space: DiscreteSpace, ops: DiscreteOperators,
                 tol: float = STEADY_TOL_NEWTON, max_iter: int = STEADY_MAX_ITER,
                 min_step: float = STEADY_MIN_STEP):
        self.space = space
        self.ops = ops
        self.tol = tol
        self.max_iter = max_iter
        self.min_step = min_step
        self.nu = space.d * space.Nu
        self.dirichlet = space.dirichlet_dofs
        self.free = np.setdiff1d(np.arange(self.nu + space.Np), self.dirichlet)

    def boundary_lift(self) -> np.ndarray:
        """u_D: e1 on body dofs, zero elsewhere"""
        e1 = np.zeros(self.space.d)
        e1[0] = 1.0
        return self.space.boundary_field(e1)

    def convective(self, u: np.ndarray) -> np.ndarray:
        """-d1 u + u . grad u"""
        return -self.ops.transport1 @ u + self.ops.convection(u) @ u

    def residual(self, u: np.ndarray, p: np.ndarray, lam: float) -> np.ndarray:
        ops = self.ops
        momentum = ops.diffusion @ u + ops.divergence.T @ p
        if lam != 0.0:
            momentum = momentum + lam * self.convective(u)
        return np.concatenate([momentum, ops.divergence @ u])

    def jacobian(self, u: np.ndarray, lam: float) -> sp.csr_matrix:
        ops = self.ops
        K = ops.diffusion
        if lam != 0.0:
            K = K + lam * (-ops.transport1 + ops.convection(u) + ops.reaction(u))
        return saddle_matrix(self.space, K, ops.divergence)

    def _factor(self, J: sp.spmatrix, rhs: np.ndarray):
        Acond, bcond, x, I = condense(J, rhs, D=self.dirichlet)
        try:
            lu = splu(Acond.tocsc())
        except RuntimeError as exc:
            raise SolverError("steady Jacobian singular") from exc
        x = np.zeros(J.shape[0])
        x[I] = lu.solve(bcond)
        if not np.all(np.isfinite(x)):
            raise SolverError("steady Jacobian singular")
        return x

    def _forcing_scale(self, lam: float) -> float:
        u = self.boundary_lift()
        r = self.residual(u, np.zeros(self.space.Np), lam)
        return max(float(np.linalg.norm(r[self.free])), 1.0)

    def newton(self, lam: float, initial_guess: Optional[SteadyState] = None) -> SteadyState:
        if lam < 0:
            raise ValidationError("lambda negative")
        if initial_guess is not None:
            u = initial_guess.velocity.copy()
            p = initial_guess.pressure.copy()
            u[self.dirichlet] = self.boundary_lift()[self.dirichlet]
        else:
            u = self.boundary_lift()
            p = np.zeros(self.space.Np)
        scale = self._forcing_scale(lam)

        res = np.linalg.norm(self.residual(u, p, lam)[self.free]) / scale
        iterations = 0
        while res >= self.tol:
            if iterations >= self.max_iter:
                raise SolverError(
                    f"Newton diverged at lambda = {lam:g} (residual {res:.3e}); "
                    "use continuation in lambda", last_residual=res)
            F = self.residual(u, p, lam)
            delta = self._factor(self.jacobian(u, lam), -F)
            u = u + delta[:self.nu]
            p = p + delta[self.nu:]
            iterations += 1
            res = np.linalg.norm(self.residual(u, p, lam)[self.free]) / scale
            logger.debug("Newton %d at lambda=%g: residual %.3e", iterations, lam, res)
            if not np.isfinite(res):
                raise SolverError(f"Newton diverged at lambda = {lam:g}; use continuation in lambda",
                                  last_residual=res)

        traction = self.traction(u, p, lam)
        chi0 = chi_from_traction(self.ops.params, traction)
        logger.info("Steady state at lambda=%g: %d Newton iterations, residual %.3e", lam, iterations, res)
        return SteadyState(lam=float(lam), velocity=u, pressure=p, chi0=chi0, traction=traction,
                           residual_norm=float(res), newton_iterations=iterations)

    def traction(self, u: np.ndarray, p: np.ndarray, lam: float) -> np.ndarray:
        extra = lam * self.convective(u) if lam != 0.0 else None
        return self.ops.traction(u, p, extra)

    def derivative(self, state: SteadyState) -> BranchDerivative:
        lam = state.lam
        u0 = state.velocity
        forcing = np.concatenate([self.convective(u0), np.zeros(self.space.Np)])
        J = self.jacobian(u0, lam)
        delta = self._factor(J, -forcing)
        du, dp = delta[:self.nu], delta[self.nu:]
        r = (J @ delta + forcing)[self.free]
        res = float(np.linalg.norm(r) / max(np.linalg.norm(forcing), 1.0))

        ops = self.ops
        extra = self.convective(u0)
        if lam != 0.0:
            extra = extra + lam * (-ops.transport1 + ops.convection(u0) + ops.reaction(u0)) @ du
        dchi = chi_from_traction(ops.params, ops.traction(du, dp, extra))
        return BranchDerivative(velocity=du, pressure=dp, chi0=dchi, residual_norm=res)


def chi_from_traction(params: ModelParams, traction: np.ndarray) -> np.ndarray:
    """chi0 = -varpi A^{-1} traction"""
    return -params.varpi * np.linalg.solve(np.asarray(params.A, dtype=float), np.real(traction))


def solve_steady(solver: SteadySolver, lam: float, initial_guess: Optional[SteadyState] = None) -> SteadyState:
    return solver.newton(lam, initial_guess)


def continue_in_lambda(solver: SteadySolver, lam_targets: Sequence[float]) -> List[SteadyState]:
    """Each target seeded from the previous converged state; failing steps are halved"""
    targets = [float(t) for t in lam_targets]
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise ValidationError("lambda targets must be ascending")
    if targets and targets[0] < 0:
        raise ValidationError("lambda negative")

    states: List[SteadyState] = []
    current: Optional[SteadyState] = None
    for target in targets:
        lam = current.lam if current is not None else target
        step = target - lam
        while current is None or current.lam < target:
            trial = target if current is None else min(lam + step, target)
            try:
                current = solver.newton(trial, current)
                lam = current.lam
            except SolverError as exc:
                step *= 0.5
                if current is None or step < solver.min_step:
                    raise SolverError(f"continuation failed below lambda = {trial:g}: {exc}",
                                      last_residual=exc.last_residual) from exc
                logger.warning("Continuation step failed at lambda=%g, halving to %g", trial, step)
        states.append(current)
    return states


def branch_derivative(solver: SteadySolver, state: SteadyState) -> BranchDerivative:
    return solver.derivative(state)
