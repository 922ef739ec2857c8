"""
Core model: physical and dimensionless parameters, stiffness algebra and body geometry
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from src.errors import ValidationError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12

GEOMETRY_KINDS_2D = ('circle', 'ellipse', 'polygon')
GEOMETRY_KINDS_3D = ('sphere', 'ellipsoid')


@dataclass(frozen=True)
class BodyGeometry:
    """Shape of the rigid body, centred at the origin"""

    kind: str
    params: Dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return 2 if self.kind in GEOMETRY_KINDS_2D else 3

    @property
    def semi_axes(self) -> np.ndarray:
        if self.kind in ('circle', 'sphere'):
            r = 0.5 * float(self.params.get('diameter', 1.0))
            return np.full(self.dimension, r)
        if self.kind in ('ellipse', 'ellipsoid'):
            return np.asarray(self.params['semi_axes'], dtype=float)
        raise ValidationError(f"semi_axes undefined for geometry '{self.kind}'")

    @property
    def vertices(self) -> np.ndarray:
        """Polygon vertices, shape (n, 2)"""
        return np.asarray(self.params['points'], dtype=float)

    @property
    def characteristic_diameter(self) -> float:
        """R* = diam of the body"""
        if self.kind == 'polygon':
            pts = self.vertices
            diff = pts[:, None, :] - pts[None, :, :]
            return float(np.sqrt((diff ** 2).sum(axis=-1)).max())
        return float(2.0 * self.semi_axes.max())

    def radius(self, directions: np.ndarray) -> np.ndarray:
        """Distance from the origin to the boundary along unit directions (d, n)"""
        if self.kind == 'polygon':
            return _polygon_ray_distance(self.vertices, directions)
        axes = self.semi_axes[:, None]
        return 1.0 / np.sqrt(((directions / axes) ** 2).sum(axis=0))

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Strict inside test for points x of shape (d, n)"""
        if self.kind == 'polygon':
            return _winding_number(self.vertices, x) != 0
        axes = self.semi_axes[:, None]
        return ((x / axes) ** 2).sum(axis=0) < 1.0 - 1e-12


def _winding_number(poly: np.ndarray, x: np.ndarray) -> np.ndarray:
    wn = np.zeros(x.shape[1], dtype=int)
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cross = (b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])
        up = (a[1] <= x[1]) & (b[1] > x[1]) & (cross > 0)
        down = (a[1] > x[1]) & (b[1] <= x[1]) & (cross < 0)
        wn += up.astype(int) - down.astype(int)
    return wn


def _polygon_ray_distance(poly: np.ndarray, directions: np.ndarray) -> np.ndarray:
    n = len(poly)
    out = np.full(directions.shape[1], np.inf)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        e = b - a
        # solve t*dir = a + s*e
        det = directions[0] * (-e[1]) - directions[1] * (-e[0])
        ok = np.abs(det) > 1e-14
        t = np.where(ok, (a[0] * (-e[1]) - a[1] * (-e[0])) / np.where(ok, det, 1.0), np.inf)
        s = np.where(ok, (directions[0] * a[1] - directions[1] * a[0]) / np.where(ok, det, 1.0), -1.0)
        hit = ok & (t > 0) & (s >= -1e-12) & (s <= 1 + 1e-12)
        out = np.where(hit, np.minimum(out, t), out)
    return out


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return (orient(p1, p2, p3) * orient(p1, p2, p4) < 0
            and orient(p3, p4, p1) * orient(p3, p4, p2) < 0)


def make_geometry(kind: str, params: Optional[Dict] = None) -> BodyGeometry:
    """Build and check a BodyGeometry"""
    params = dict(params or {})
    if kind not in GEOMETRY_KINDS_2D + GEOMETRY_KINDS_3D:
        raise ValidationError(f"unknown geometry.kind '{kind}'")

    if kind in ('ellipse', 'ellipsoid'):
        axes = np.asarray(params.get('semi_axes', []), dtype=float)
        expected = 2 if kind == 'ellipse' else 3
        if axes.shape != (expected,) or np.any(axes <= 0):
            raise ValidationError(f"geometry.params.semi_axes must hold {expected} positive values")
    elif kind in ('circle', 'sphere'):
        if float(params.get('diameter', 1.0)) <= 0:
            raise ValidationError("geometry.params.diameter must be positive")
    else:
        pts = np.asarray(params.get('points', []), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValidationError("geometry.params.points must be a list of at least 3 (x, y) pairs")
        n = len(pts)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                    raise ValidationError("polygon boundary self-intersects")
        area2 = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        if area2 < 0:
            pts = pts[::-1]
        centroid = pts.mean(axis=0)
        if np.linalg.norm(centroid) > 1e-10 * max(1.0, np.abs(pts).max()):
            logger.info("Recentering polygon body at the origin (shift %s)", centroid)
            pts = pts - centroid
        if not np.all(_winding_number(pts, np.zeros((2, 1)))):
            raise ValidationError("polygon must contain the origin")
        params['points'] = pts.tolist()

    return BodyGeometry(kind=kind, params=params)


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional inputs"""

    body_mass: float
    fluid_density: float
    kinematic_viscosity: float
    length_scale: float
    freestream_speed: float
    stiffness: np.ndarray


@dataclass(frozen=True)
class StiffnessBounds:
    """Extremal eigenvalues and natural frequencies of A"""

    a: float
    b: float
    natural_frequencies: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless model constants"""

    lam: float
    varpi: float
    A: np.ndarray
    dimension: int
    geometry: BodyGeometry
    fixed_body: bool = False

    def with_lambda(self, lam: float) -> 'ModelParams':
        return ModelParams(lam, self.varpi, self.A, self.dimension, self.geometry, self.fixed_body)

    def with_varpi(self, varpi: float) -> 'ModelParams':
        return ModelParams(self.lam, varpi, self.A, self.dimension, self.geometry, self.fixed_body)


def _check_spd(B: np.ndarray, name: str) -> float:
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    scale = max(np.abs(B).max(), 1e-300)
    if np.abs(B - B.T).max() > SYMMETRY_TOL * scale:
        raise ValidationError(f"{name} not symmetric")
    min_eig = float(np.linalg.eigvalsh(B).min())
    if min_eig <= 0:
        raise ValidationError(f"{name} not positive definite (min eigenvalue {min_eig:.6e})")
    return min_eig


def nondimensionalize(p: PhysicalParams, d: int, geometry: Optional[BodyGeometry] = None) -> ModelParams:
    """
    A = L^4 B / (M nu^2), varpi = rho L^d / M, lambda = V L / nu
    In 2D the mass ratio uses L^2 and B is reduced to its leading 2x2 block
    """
    for name in ('body_mass', 'fluid_density', 'kinematic_viscosity', 'length_scale', 'freestream_speed'):
        if not getattr(p, name) > 0:
            raise ValidationError(f"{name} must be positive (got {getattr(p, name)})")
    if d not in (2, 3):
        raise ValidationError(f"dimension must be 2 or 3 (got {d})")

    B = np.asarray(p.stiffness, dtype=float)
    _check_spd(B, 'B')
    if B.shape[0] < d:
        raise ValidationError(f"stiffness must be at least {d}x{d}")
    B = B[:d, :d]

    M, rho, nu, L, V = p.body_mass, p.fluid_density, p.kinematic_viscosity, p.length_scale, p.freestream_speed
    lam = V * L / nu
    varpi = rho * L ** d / M
    A = L ** 4 * B / (M * nu ** 2)

    if geometry is None:
        geometry = make_geometry('circle' if d == 2 else 'sphere', {'diameter': 1.0})
    return validate_params(ModelParams(lam=lam, varpi=varpi, A=A, dimension=d, geometry=geometry))


def stiffness_bounds(A: np.ndarray) -> StiffnessBounds:
    """Extremal eigenvalues a <= b and natural frequencies sqrt(eig A)"""
    A = np.asarray(A, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    if eig[0] <= 0:
        raise ValidationError(f"A not positive definite (min eigenvalue {eig[0]:.6e})")
    return StiffnessBounds(a=float(eig[0]), b=float(eig[-1]), natural_frequencies=np.sqrt(eig))


def validate_params(m: ModelParams) -> ModelParams:
    """Re-check every ModelParams invariant and log the normalization report"""
    if m.dimension not in (2, 3):
        raise ValidationError(f"dimension must be 2 or 3 (got {m.dimension})")
    if not np.isfinite(m.lam) or m.lam < 0:
        raise ValidationError("lambda negative")
    if not np.isfinite(m.varpi) or m.varpi < 0:
        raise ValidationError("varpi negative")
    A = np.asarray(m.A, dtype=float)
    if A.shape != (m.dimension, m.dimension):
        raise ValidationError(f"A must be {m.dimension}x{m.dimension} (got {A.shape})")
    _check_spd(A, 'A')
    if m.geometry.dimension != m.dimension:
        raise ValidationError(f"geometry '{m.geometry.kind}' does not match dimension {m.dimension}")

    for key, value in normalization_report(m).items():
        logger.debug("normalization %s = %s", key, value)
    return m


def normalization_report(m: ModelParams) -> Dict:
    """Metadata describing the dimensionless scaling in use"""
    bounds = stiffness_bounds(m.A)
    return {
        'lambda': float(m.lam),
        'varpi': float(m.varpi),
        'dimension': int(m.dimension),
        'varpi_convention': 'rho*L^2/M (2D convention)' if m.dimension == 2 else 'rho*L^3/M',
        'stiffness_a': bounds.a,
        'stiffness_b': bounds.b,
        'natural_frequencies': bounds.natural_frequencies.tolist(),
        'characteristic_diameter': m.geometry.characteristic_diameter,
        'geometry': m.geometry.kind,
        'fixed_body': bool(m.fixed_body),
    }


def model_from_values(lam: float, varpi: float, A: Sequence, dimension: int,
                      kind: str, params: Optional[Dict] = None, fixed_body: bool = False) -> ModelParams:
    """Build validated ModelParams from plain config values (A row-major)"""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        if A.size != dimension * dimension:
            raise ValidationError(f"A must hold {dimension * dimension} entries (got {A.size})")
        A = A.reshape(dimension, dimension)
    geometry = make_geometry(kind, params)
    return validate_params(ModelParams(float(lam), float(varpi), A, int(dimension), geometry, bool(fixed_body)))
