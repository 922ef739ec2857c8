"""
Linearized operators on the discrete coupled space
L0, the convective perturbation Khat, L2 = L0 + Khat, the lambda-derivative S011,
the coupled inner product, Gram adjoints and the discrete Leray projection
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.core_model import ModelParams
from src.discretization import DiscreteOperators
from src.errors import SolverError, ValidationError
from src.reporting import atomic_write_text
from src.steady_solver import BranchDerivative, SteadyState

logger = logging.getLogger(__name__)

LAMBDA_MATCH_TOL = 1e-12


@dataclass
class CoupledOperator:
    """
    Operator L = G^{-1} J restricted to the divergence-free coupled space.
    `matrix` holds the weak form J; the evolution reads G x' + J x + C^T p = N.
    """

    matrix: sp.csr_matrix
    ops: DiscreteOperators
    kind: str
    metadata: Dict = field(default_factory=dict)

    @property
    def gram(self) -> sp.csr_matrix:
        return self.ops.gram

    @property
    def constraint(self) -> sp.csr_matrix:
        return self.ops.Cx

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def lam(self) -> Optional[float]:
        return self.metadata.get('lambda')

    def weak(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Strong action G^{-1} J x"""
        return _solve(_gram_lu(self.ops), self.matrix @ x)

    def adjoint(self) -> 'CoupledOperator':
        """Adjoint with respect to the coupled inner product"""
        m = self.matrix.conj().T if np.iscomplexobj(self.matrix.data) else self.matrix.T
        meta = dict(self.metadata)
        meta['adjoint'] = not meta.get('adjoint', False)
        return CoupledOperator(m.tocsr(), self.ops, self.kind, meta)

    def dense(self) -> np.ndarray:
        return _solve(_gram_lu(self.ops), self.matrix.toarray())

    def __add__(self, other: 'CoupledOperator') -> 'CoupledOperator':
        if other.ops is not self.ops:
            raise ValidationError("operators live on different discretizations")
        if self.lam is not None and other.lam is not None and abs(self.lam - other.lam) > LAMBDA_MATCH_TOL:
            raise ValidationError(f"parameter mismatch: lambda {self.lam} vs {other.lam}")
        meta = {**other.metadata, **self.metadata}
        return CoupledOperator((self.matrix + other.matrix).tocsr(), self.ops,
                               f'{self.kind}+{other.kind}', meta)

    def __sub__(self, other: 'CoupledOperator') -> 'CoupledOperator':
        neg = CoupledOperator(-other.matrix, other.ops, other.kind, other.metadata)
        return self + neg


def _solve(lu, b: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(b):
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
    return lu.solve(b)


def _gram_lu(ops: DiscreteOperators):
    lu = getattr(ops, '_gram_lu', None)
    if lu is None:
        lu = splu(ops.gram.tocsc())
        ops._gram_lu = lu
    return lu


def assemble_L0(params: ModelParams, ops: DiscreteOperators) -> CoupledOperator:
    """Stokes-Oseen part: diffusion, transport -lambda d1, spring coupling"""
    J = (ops.Ax - params.lam * ops.T1x + ops.spring).tocsr()
    return CoupledOperator(J, ops, 'L0', {'lambda': float(params.lam), 'varpi': float(params.varpi)})


def assemble_Khat(steady: SteadyState, params: ModelParams, ops: DiscreteOperators) -> CoupledOperator:
    """lambda (u0 . grad w + (w - sigma) . grad u0)"""
    if abs(steady.lam - params.lam) > LAMBDA_MATCH_TOL:
        raise ValidationError(f"parameter mismatch: steady state at lambda {steady.lam}, model at {params.lam}")
    K = params.lam * ops.linearized_convection(steady.velocity)
    return CoupledOperator(K.tocsr(), ops, 'Khat', {'lambda': float(params.lam)})


def assemble_L2(params: ModelParams, steady: SteadyState, ops: DiscreteOperators) -> CoupledOperator:
    L2 = assemble_L0(params, ops) + assemble_Khat(steady, params, ops)
    L2.kind = 'L2'
    return L2


def assemble_S011(steady: SteadyState, deriv: BranchDerivative, params: ModelParams,
                  ops: DiscreteOperators) -> CoupledOperator:
    """
    d/dlambda of the assembled L2 along the steady branch:
    -d1 w + c(u0; w) + c(w - sigma; u0) + lambda [c(u0'; w) + c(w - sigma; u0')]
    """
    if abs(steady.lam - params.lam) > LAMBDA_MATCH_TOL:
        raise ValidationError(f"parameter mismatch: steady state at lambda {steady.lam}, model at {params.lam}")
    S = -ops.T1x + ops.linearized_convection(steady.velocity)
    if params.lam != 0.0:
        S = S + params.lam * ops.linearized_convection(deriv.velocity)
    return CoupledOperator(S.tocsr(), ops, 'S011', {'lambda': float(params.lam)})


def coupled_inner_product(ops: DiscreteOperators, x: np.ndarray, y: np.ndarray) -> complex:
    return ops.inner(x, y)


def adjoint(L: CoupledOperator) -> CoupledOperator:
    return L.adjoint()


def _projector_lu(ops: DiscreteOperators):
    lu = getattr(ops, '_projector_lu', None)
    if lu is None:
        K = sp.bmat([[ops.gram, ops.Cx.T], [ops.Cx, None]], format='csc')
        try:
            lu = splu(K)
        except RuntimeError as exc:
            raise SolverError("Leray projection system singular") from exc
        ops._projector_lu = lu
    return lu


def leray_project(ops: DiscreteOperators, x: np.ndarray) -> np.ndarray:
    """Gram-orthogonal projection onto ker Cx"""
    lu = _projector_lu(ops)
    n = ops.space.n
    rhs = np.concatenate([ops.gram @ x, np.zeros(ops.Cx.shape[0])])
    y = _solve(lu, rhs)
    return y[:n]


def random_solenoidal(ops: DiscreteOperators, rng: np.random.Generator, complex_valued: bool = False) -> np.ndarray:
    n = ops.space.n
    x = rng.standard_normal(n)
    if complex_valued:
        x = x + 1j * rng.standard_normal(n)
    return leray_project(ops, x)


def resolvent_solve(L: CoupledOperator, zeta: float, rhs: np.ndarray):
    """Solve (L - i zeta) W = f on the divergence-free space; returns (W, pressure)"""
    ops = L.ops
    n, m = ops.space.n, ops.Cx.shape[0]
    K = sp.bmat([[L.matrix - 1j * zeta * ops.gram, ops.Cx.T], [ops.Cx, None]], format='csc')
    b = np.concatenate([ops.gram @ rhs, np.zeros(m)]).astype(complex)
    sol = splu(K).solve(b)
    return sol[:n], sol[n:]


def resolvent_ratio(L0: CoupledOperator, zeta: float, rhs: np.ndarray) -> float:
    """
    (||D^2 w|| + |zeta|^(1/2) ||grad w|| + |zeta| (||w|| + |sigma| + |eta|)) / ||(L0 - i zeta) W||
    with D^2 measured by the broken second-derivative norm
    """
    ops = L0.ops
    f = leray_project(ops, rhs.astype(complex))
    x, _ = resolvent_solve(L0, zeta, f)
    norms = ops.field_norms(ops.space.field(x))
    s = ops.space
    rigid = np.linalg.norm(x[s.sigma]) + np.linalg.norm(x[s.eta])
    numerator = norms['D2'] + np.sqrt(abs(zeta)) * norms['H1'] + abs(zeta) * (norms['L2'] + rigid)
    denominator = np.sqrt(abs(ops.inner(f, f)))
    return float(numerator / denominator)


def dump_operator(op: CoupledOperator, path: str) -> str:
    """Write the weak matrix in coordinate text format: one 'row col value' line per entry"""
    coo = op.matrix.tocoo()
    lines = [f"# {op.kind} {coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
    for r, c, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{r} {c} {format(float(np.real(v)), '.16e')}")
    atomic_write_text(path, '\n'.join(lines) + '\n')
    logger.info("Dumped %s (%d nonzeros) to %s", op.kind, coo.nnz, path)
    return path
