"""
Taylor-Hood discretization of the coupled fluid-body system
Builds the P2/P1 spaces, the rigid coupling dofs and every assembled block:
Gram matrix, diffusion, transport, skew convection, divergence and traction
"""
import logging
from typing import Dict, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from skfem import (
    Basis,
    BilinearForm,
    ElementTetP1,
    ElementTetP2,
    ElementTriP1,
    ElementTriP2,
    FacetBasis,
    Functional,
    asm,
    condense,
    solve,
)
from skfem.helpers import dot, grad

from config.settings import INF_SUP_MAX_PRESSURE_DOFS, QUADRATURE_ORDER
from src.core_model import ModelParams
from src.errors import SolverError, ValidationError
from src.mesh import Mesh, build_truncated_domain

logger = logging.getLogger(__name__)


@BilinearForm
def _mass(u, v, w):
    return u * v


@BilinearForm
def _laplace(u, v, w):
    return dot(grad(u), grad(v))


def _grad_pair(i, j):
    @BilinearForm
    def form(u, v, w):
        return u.grad[i] * v.grad[j]
    return form


def _derivative(i):
    @BilinearForm
    def form(u, v, w):
        return u.grad[i] * v
    return form


def _divergence(i):
    @BilinearForm
    def form(u, q, w):
        return -u.grad[i] * q
    return form


@BilinearForm
def _advection(u, v, w):
    # (a . grad u) v
    return sum(w['a%d' % i].value * u.grad[i] for i in range(u.grad.shape[0])) * v


def _reaction(i):
    @BilinearForm
    def form(u, v, w):
        g = w['g']
        return 0.5 * u * (g.grad[i] * v - g.value * v.grad[i])
    return form


@Functional
def _l2(w):
    return sum(w['u%d' % i].value ** 2 for i in range(w.x.shape[0]))


@Functional
def _h1(w):
    return sum(dot(w['u%d' % i].grad, w['u%d' % i].grad) for i in range(w.x.shape[0]))


@Functional
def _strain(w):
    d = w.x.shape[0]
    total = 0.0
    for i in range(d):
        for j in range(d):
            e = 0.5 * (w['u%d' % i].grad[j] + w['u%d' % j].grad[i])
            total = total + e ** 2
    return total


def _stress_normal(l):
    @Functional
    def form(w):
        d = w.x.shape[0]
        out = -w['p'].value * w.n[l]
        for j in range(d):
            out = out + (w['u%d' % l].grad[j] + w['u%d' % j].grad[l]) * w.n[j]
        return out
    return form


class DiscreteSpace:
    """P2 velocity / P1 pressure space with rigid coupling dofs (sigma, eta)"""

    def __init__(self, mesh: Mesh, fixed_body: bool = False):
        self.mesh = mesh
        self.d = d = mesh.dimension
        self.fixed_body = fixed_body
        m = mesh.skfem
        if d == 2:
            ev, ep = ElementTriP2(), ElementTriP1()
        else:
            ev, ep = ElementTetP2(), ElementTetP1()
        self.ubasis = Basis(m, ev, intorder=QUADRATURE_ORDER)
        self.pbasis = Basis(m, ep, intorder=QUADRATURE_ORDER)
        self.Nu = self.ubasis.N
        self.Np = self.pbasis.N

        self.body_dofs = np.unique(self.ubasis.get_dofs('body').all())
        self.inflow_dofs = np.setdiff1d(np.unique(self.ubasis.get_dofs('inflow').all()), self.body_dofs)
        fixed = np.union1d(self.body_dofs, self.inflow_dofs)
        self.free_dofs = np.setdiff1d(np.arange(self.Nu), fixed)
        self.nfree = self.free_dofs.size

        self.nf = d * self.nfree
        self.n = self.nf if fixed_body else self.nf + 2 * d
        self.sigma = slice(self.nf, self.nf) if fixed_body else slice(self.nf, self.nf + d)
        self.eta = slice(self.nf, self.nf) if fixed_body else slice(self.nf + d, self.nf + 2 * d)

        self.prolongation = self._prolongation()
        self.constant_extension = self._constant_extension()
        self.body_indicator = self._body_indicator()
        logger.info("Discrete space: %d velocity dofs, %d pressure dofs, %d coupled unknowns",
                    d * self.Nu, self.Np, self.n)

    def vector_dofs(self, scalar: np.ndarray) -> np.ndarray:
        return np.concatenate([a * self.Nu + scalar for a in range(self.d)])

    @property
    def dirichlet_dofs(self) -> np.ndarray:
        return self.vector_dofs(np.union1d(self.body_dofs, self.inflow_dofs))

    def _prolongation(self) -> sp.csr_matrix:
        """P: coupled coordinates (w_free, sigma, eta) -> full velocity field"""
        rows, cols = [], []
        for a in range(self.d):
            rows.append(a * self.Nu + self.free_dofs)
            cols.append(a * self.nfree + np.arange(self.nfree))
            if not self.fixed_body:
                rows.append(a * self.Nu + self.body_dofs)
                cols.append(np.full(self.body_dofs.size, self.nf + a))
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.d * self.Nu, self.n))

    def _constant_extension(self) -> sp.csr_matrix:
        """Pc: sigma -> the constant field sigma over the whole domain"""
        if self.fixed_body:
            return sp.csr_matrix((self.d * self.Nu, self.n))
        rows = np.arange(self.d * self.Nu)
        cols = self.nf + np.repeat(np.arange(self.d), self.Nu)
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.d * self.Nu, self.n))

    def _body_indicator(self) -> np.ndarray:
        phi = np.zeros((self.d * self.Nu, self.d))
        for a in range(self.d):
            phi[a * self.Nu + self.body_dofs, a] = 1.0
        return phi

    def components(self, u: np.ndarray):
        return [u[a * self.Nu:(a + 1) * self.Nu] for a in range(self.d)]

    def interpolate(self, u: np.ndarray, prefix: str = 'u', basis=None) -> Dict:
        basis = basis or self.ubasis
        return {f'{prefix}{a}': basis.interpolate(c) for a, c in enumerate(self.components(np.real(u)))}

    def field(self, x: np.ndarray) -> np.ndarray:
        """Full velocity field of a coupled vector"""
        return self.prolongation @ x

    def boundary_field(self, values: np.ndarray, dofs: Optional[np.ndarray] = None) -> np.ndarray:
        """Full field equal to the d-vector values on body dofs, zero elsewhere"""
        dofs = self.body_dofs if dofs is None else dofs
        u = np.zeros(self.d * self.Nu, dtype=np.result_type(values, float))
        for a in range(self.d):
            u[a * self.Nu + dofs] = values[a]
        return u

    def vertex_values(self, u: np.ndarray) -> np.ndarray:
        return np.vstack([c[self.ubasis.nodal_dofs[0]] for c in self.components(u)])


class DiscreteOperators:
    """Assembled blocks of the coupled system in full and coupled coordinates"""

    def __init__(self, space: DiscreteSpace, params: ModelParams):
        self.space = space
        self.params = params
        ub, pb, d = space.ubasis, space.pbasis, space.d

        self.mass_scalar = asm(_mass, ub).tocsr()
        self.mass = sp.block_diag([self.mass_scalar] * d, format='csr')

        lap = asm(_laplace, ub)
        blocks = [[None] * d for _ in range(d)]
        for b in range(d):
            for a in range(d):
                g = asm(_grad_pair(b, a), ub)
                blocks[b][a] = lap + g if a == b else g
        self.diffusion = sp.bmat(blocks, format='csr')

        t1 = asm(_derivative(0), ub)
        self.transport1_scalar = (0.5 * (t1 - t1.T)).tocsr()
        self.transport1 = sp.block_diag([self.transport1_scalar] * d, format='csr')

        self.divergence = sp.hstack([asm(_divergence(a), ub, pb) for a in range(d)], format='csr')
        self.pressure_mass = asm(_mass, pb).tocsr()

        P = space.prolongation
        self.Ax = (P.T @ self.diffusion @ P).tocsr()
        self.T1x = (P.T @ self.transport1 @ P).tocsr()
        self.Mx = (P.T @ self.mass @ P).tocsr()
        self.Cx = (self.divergence @ P).tocsr()
        self.spring = self._spring()
        self._gram = None

        self._fb_u = FacetBasis(space.mesh.skfem, ub.elem, facets=space.mesh.boundaries['body'],
                                intorder=QUADRATURE_ORDER)
        self._fb_p = FacetBasis(space.mesh.skfem, pb.elem, facets=space.mesh.boundaries['body'],
                                intorder=QUADRATURE_ORDER)

    def _spring(self) -> sp.csr_matrix:
        s = self.space
        out = sp.lil_matrix((s.n, s.n))
        if not s.fixed_body:
            if self.params.varpi <= 0:
                # spring rows are Gram-weighted by 1/varpi
                return out.tocsr()
            A = np.asarray(self.params.A, dtype=float) / self.params.varpi
            out[s.sigma, s.eta] = A
            out[s.eta, s.sigma] = -A
        return out.tocsr()

    @property
    def gram(self) -> sp.csr_matrix:
        """Gram matrix of the coupled inner product"""
        if self._gram is None:
            s = self.space
            G = self.Mx.tolil()
            if not s.fixed_body:
                varpi = self.params.varpi
                if varpi <= 0:
                    raise ValidationError("inner product undefined at varpi = 0")
                A = np.asarray(self.params.A, dtype=float)
                G[s.sigma, s.sigma] = G[s.sigma, s.sigma].toarray() + np.eye(s.d) / varpi
                G[s.eta, s.eta] = A / varpi
            G = G.tocsr()
            diag = G.diagonal()
            if np.any(diag <= 0):
                raise SolverError("singular Gram (zero-measure cell)")
            self._gram = G
        return self._gram

    def inner(self, x: np.ndarray, y: np.ndarray) -> complex:
        """Coupled inner product, conjugate-linear in the first argument"""
        return np.vdot(x, self.gram @ y)

    def convection(self, a: np.ndarray) -> sp.csr_matrix:
        """Skew convection c(a; b, phi) as a matrix acting on b"""
        Ta = asm(_advection, self.space.ubasis, **self.space.interpolate(a, prefix='a'))
        S = (0.5 * (Ta - Ta.T)).tocsr()
        return sp.block_diag([S] * self.space.d, format='csr')

    def reaction(self, b: np.ndarray) -> sp.csr_matrix:
        """Matrix of delta -> c(delta; b, phi)"""
        s = self.space
        comps = s.components(np.real(b))
        blocks = [[asm(_reaction(a), s.ubasis, g=s.ubasis.interpolate(comps[c])) for a in range(s.d)]
                  for c in range(s.d)]
        return sp.bmat(blocks, format='csr')

    def convective_pair(self, a: np.ndarray, b: np.ndarray) -> sp.csr_matrix:
        """Coupled-coordinate matrix x -> P^T [c(a; Px) + c((P - Pc)x; b)]"""
        P, Pc = self.space.prolongation, self.space.constant_extension
        full = self.convection(a) @ P + self.reaction(b) @ (P - Pc)
        return (P.T @ full).tocsr()

    def linearized_convection(self, u0: np.ndarray) -> sp.csr_matrix:
        """u0 . grad w + (w - sigma) . grad u0 in coupled coordinates"""
        return self.convective_pair(u0, u0)

    def quadratic(self, x: np.ndarray) -> np.ndarray:
        """P^T c((P - Pc)x; Px)"""
        P, Pc = self.space.prolongation, self.space.constant_extension
        a = (P - Pc) @ x
        return P.T @ (self.convection(a) @ (P @ x))

    def quadratic_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        P, Pc = self.space.prolongation, self.space.constant_extension
        return self.convective_pair((P - Pc) @ x, P @ x)

    def traction(self, w: np.ndarray, p: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Residual-based traction: the momentum residual tested with the
        field equal to e_m on body dofs. Exact for discrete solutions.
        """
        r = self.diffusion @ w + self.divergence.T @ p
        if extra is not None:
            r = r + extra
        return self.space.body_indicator.T @ r

    def boundary_traction(self, w: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Direct facet quadrature of the integral of (2D(w) - pI) n over the body"""
        def one(wr, pr):
            kw = self.space.interpolate(wr, basis=self._fb_u)
            kw['p'] = self._fb_p.interpolate(pr)
            return np.array([asm(_stress_normal(l), self._fb_u, **kw) for l in range(self.space.d)])
        out = one(np.real(w), np.real(p))
        if np.iscomplexobj(w) or np.iscomplexobj(p):
            out = out + 1j * one(np.imag(w), np.imag(p))
        return out

    def field_norms(self, w: np.ndarray) -> Dict[str, float]:
        """L2, H1-seminorm, strain and broken second-derivative norms of a full field"""
        parts = [np.real(w)] + ([np.imag(w)] if np.iscomplexobj(w) else [])
        out = {'L2': 0.0, 'H1': 0.0, 'D': 0.0, 'D2': 0.0}
        for part in parts:
            kw = self.space.interpolate(part)
            out['L2'] += asm(_l2, self.space.ubasis, **kw)
            out['H1'] += asm(_h1, self.space.ubasis, **kw)
            out['D'] += asm(_strain, self.space.ubasis, **kw)
            out['D2'] += self._broken_hessian_sq(part)
        return {k: float(np.sqrt(max(v, 0.0))) for k, v in out.items()}

    def _broken_hessian_sq(self, w: np.ndarray) -> float:
        ub = self.space.ubasis
        x = ub.global_coordinates().value  # (d, nel, nqp)
        d, nel, nqp = x.shape
        design = np.concatenate([np.ones((1, nel, nqp)), x], axis=0)  # (d+1, nel, nqp)
        normal = np.einsum('inq,jnq->nij', design, design)
        area = ub.dx.sum(axis=1)
        total = 0.0
        for comp in self.space.components(w):
            g = ub.interpolate(comp).grad  # (d, nel, nqp)
            rhs = np.einsum('inq,knq->nik', design, g)
            coef = np.linalg.solve(normal, rhs)  # (nel, d+1, d)
            total += float((area * (coef[:, 1:, :] ** 2).sum(axis=(1, 2))).sum())
        return total

    def strain_energy(self, w: np.ndarray) -> float:
        """||D(w)||^2 by quadrature"""
        return self.field_norms(w)['D'] ** 2


def assemble_fsi_operators(mesh: Mesh, space: DiscreteSpace, params: ModelParams) -> DiscreteOperators:
    if space.mesh is not mesh:
        raise ValidationError("space was built on a different mesh")
    ops = DiscreteOperators(space, params)
    logger.info("Assembled coupled operators (%d x %d)", space.n, space.n)
    return ops


def build_discretization(params: ModelParams, R_trunc: float, resolution: int, **mesh_kw):
    """Mesh, space and operators for a model in one call"""
    mesh = build_truncated_domain(params.geometry, R_trunc, resolution, **mesh_kw)
    space = DiscreteSpace(mesh, fixed_body=params.fixed_body)
    return mesh, space, assemble_fsi_operators(mesh, space, params)


def saddle_matrix(space: DiscreteSpace, velocity_block: sp.spmatrix, divergence: sp.spmatrix) -> sp.csr_matrix:
    return sp.bmat([[velocity_block, divergence.T], [divergence, None]], format='csr')


def lift_boundary_data(space: DiscreteSpace, ops: DiscreteOperators, G: np.ndarray):
    """
    Discretely divergence-free field equal to G on the body and zero on the
    Dirichlet farfield. Returns (velocity, pressure).
    """
    G = np.asarray(G)
    K = saddle_matrix(space, ops.diffusion, ops.divergence)
    D = space.dirichlet_dofs
    nu = space.d * space.Nu

    def one(values):
        x0 = np.zeros(nu + space.Np)
        x0[:nu] = space.boundary_field(values)
        x = solve(*condense(K, np.zeros(nu + space.Np), x=x0, D=D))
        return x[:nu], x[nu:]

    u, p = one(np.real(G))
    if np.iscomplexobj(G):
        ui, pi = one(np.imag(G))
        u, p = u + 1j * ui, p + 1j * pi
    return u, p


def inf_sup_constant(space: DiscreteSpace, ops: DiscreteOperators) -> Optional[float]:
    """Discrete inf-sup constant from the pressure Schur complement"""
    if space.Np > INF_SUP_MAX_PRESSURE_DOFS:
        logger.info("Skipping inf-sup estimate (%d pressure dofs)", space.Np)
        return None
    free = np.setdiff1d(np.arange(space.d * space.Nu), space.dirichlet_dofs)
    A = ops.diffusion[free][:, free].tocsc()
    Bt = ops.divergence[:, free].T.tocsc()
    lu = splu(A)
    S = (ops.divergence[:, free] @ lu.solve(Bt.toarray()))
    S = 0.5 * (S + S.T)
    beta2 = scipy.linalg.eigh(S, ops.pressure_mass.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
    beta = float(np.sqrt(max(beta2, 0.0)))
    logger.info("Measured inf-sup constant %.4e", beta)
    return beta
