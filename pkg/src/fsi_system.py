"""
FSI instantiation of the spectral and branch interfaces
Couples the steady branch, the linearized operators and the quadratic convective
nonlinearity of the perturbation system about u0(lambda_o + mu)
"""
import logging
from typing import Dict, Optional, Tuple

import scipy.sparse as sp

from config.settings import BRANCH_MU_MODE
from src.core_model import ModelParams
from src.discretization import DiscreteOperators, DiscreteSpace, assemble_fsi_operators
from src.errors import SolverError, ValidationError
from src.hopf_engine import AbstractSystem
from src.linear_operators import CoupledOperator, assemble_L0, assemble_L2, assemble_S011
from src.mesh import Mesh
from src.spectral import Pencil, PencilFamily
from src.steady_solver import BranchDerivative, SteadySolver, SteadyState, continue_in_lambda

logger = logging.getLogger(__name__)

MU_MODES = ('linear', 'resolve')
RESOLVE_STEP = 1e-5


class FsiProblem:
    """One discretization with a cache of steady states along lambda"""

    def __init__(self, params: ModelParams, mesh: Mesh, space: Optional[DiscreteSpace] = None,
                 ops: Optional[DiscreteOperators] = None, solver_kw: Optional[Dict] = None):
        self.params = params
        self.mesh = mesh
        self.space = space or DiscreteSpace(mesh, fixed_body=params.fixed_body)
        self.ops = ops or assemble_fsi_operators(mesh, self.space, params)
        self.solver = SteadySolver(self.space, self.ops, **(solver_kw or {}))
        self._states: Dict[float, SteadyState] = {}
        self._derivatives: Dict[float, BranchDerivative] = {}

    def steady(self, lam: float) -> SteadyState:
        lam = float(lam)
        if lam in self._states:
            return self._states[lam]
        lower = [l for l in self._states if l <= lam]
        seed = self._states[max(lower)] if lower else None
        try:
            state = self.solver.newton(lam, seed)
        except SolverError:
            start = max(lower) if lower else 0.0
            state = continue_in_lambda(self.solver, [start, lam])[-1]
        self._states[lam] = state
        return state

    def derivative(self, lam: float) -> BranchDerivative:
        lam = float(lam)
        if lam not in self._derivatives:
            self._derivatives[lam] = self.solver.derivative(self.steady(lam))
        return self._derivatives[lam]

    def model_at(self, lam: float) -> ModelParams:
        return self.params.with_lambda(float(lam))

    def weak_operator(self, lam: float) -> sp.csr_matrix:
        """J(lambda) about u0(lambda)"""
        return assemble_L2(self.model_at(lam), self.steady(lam), self.ops).matrix

    def operators_at(self, lam: float) -> Tuple[CoupledOperator, CoupledOperator]:
        model = self.model_at(lam)
        state = self.steady(lam)
        L2 = assemble_L2(model, state, self.ops)
        S = assemble_S011(state, self.derivative(lam), model, self.ops)
        return L2, S

    def L0(self, lam: float) -> CoupledOperator:
        return assemble_L0(self.model_at(lam), self.ops)


class FsiPencilFamily(PencilFamily):
    """Constrained pencils (J(lambda), G, Cx) along the steady branch"""

    def __init__(self, problem: FsiProblem):
        self.problem = problem

    def pencil(self, lam: float) -> Pencil:
        ops = self.problem.ops
        return Pencil(self.problem.weak_operator(lam), ops.gram, ops.Cx)

    def parameter_derivative(self, lam: float):
        return self.problem.operators_at(lam)[1].matrix


class FsiSystem(AbstractSystem):
    """
    Perturbation x about u0(lambda_o + mu):
        N(x, mu) = -(J(lambda_o + mu) - J0) x - (lambda_o + mu) c(w - sigma; w)
    """

    def __init__(self, problem: FsiProblem, lam_o: float, mu_mode: str = BRANCH_MU_MODE):
        if mu_mode not in MU_MODES:
            raise ValidationError(f"unknown branch.mu_mode '{mu_mode}'")
        self.problem = problem
        self.ops = problem.ops
        self.lam_o = float(lam_o)
        self.mu_mode = mu_mode
        L2, S = problem.operators_at(self.lam_o)
        self._J0 = L2.matrix
        self._S = S.matrix
        state = problem.steady(self.lam_o)
        deriv = problem.derivative(self.lam_o)
        self._base = (-self.ops.T1x + self.ops.linearized_convection(state.velocity)).tocsr()
        self._lin_u0 = self.ops.linearized_convection(state.velocity).tocsr()
        self._lin_du0 = self.ops.linearized_convection(deriv.velocity).tocsr()
        self._shift_cache: Dict[float, sp.csr_matrix] = {}

    @property
    def n(self) -> int:
        return self.ops.space.n

    @property
    def gram(self):
        return self.ops.gram

    @property
    def constraint(self):
        return self.ops.Cx

    @property
    def linear(self):
        return self._J0

    @property
    def s011(self):
        return self._S

    def operator_shift(self, mu: float) -> sp.csr_matrix:
        """J(lambda_o + mu) - J0"""
        mu = float(mu)
        if mu == 0.0:
            return sp.csr_matrix((self.n, self.n))
        if mu in self._shift_cache:
            return self._shift_cache[mu]
        if self.mu_mode == 'linear':
            shift = mu * self._base + (self.lam_o + mu) * mu * self._lin_du0
        else:
            state = self.problem.steady(self.lam_o + mu)
            shift = (-mu * self.ops.T1x + (self.lam_o + mu) * self.ops.linearized_convection(state.velocity)
                     - self.lam_o * self._lin_u0)
        self._shift_cache = {mu: shift.tocsr()}
        return self._shift_cache[mu]

    def operator_shift_dmu(self, mu: float) -> sp.csr_matrix:
        if self.mu_mode == 'linear':
            return (self._base + (self.lam_o + 2.0 * mu) * self._lin_du0).tocsr()
        h = RESOLVE_STEP * max(1.0, abs(self.lam_o))
        return ((self.operator_shift(mu + h) - self.operator_shift(mu - h)) / (2.0 * h)).tocsr()

    def nonlinear(self, x, mu):
        lam = self.lam_o + mu
        return -(self.operator_shift(mu) @ x) - lam * self.ops.quadratic(x)

    def nonlinear_jacobian(self, x, mu):
        lam = self.lam_o + mu
        return (-self.operator_shift(mu) - lam * self.ops.quadratic_jacobian(x)).tocsr()

    def nonlinear_dmu(self, x, mu):
        return -(self.operator_shift_dmu(mu) @ x) - self.ops.quadratic(x)

    def jacobian_at_rest_dmu(self, mu):
        return -self.operator_shift_dmu(mu)
