"""
Truncated exterior-domain meshing
Graded layers around the body, extra resolution in the downstream wake sector,
Delaunay triangulation, boundary tagging and the versioned text format
"""
import json
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.spatial import Delaunay
from skfem import MeshTet, MeshTri

from config.settings import (
    MESH_GRADING,
    MESH_OUTFLOW_ANGLE_DEG,
    MESH_WAKE_ANGLE_DEG,
    MIN_CELL_MEASURE_RATIO,
)
from src.core_model import BodyGeometry, make_geometry
from src.errors import MeshError, ValidationError

logger = logging.getLogger(__name__)

MESH_HEADER = "oscilla-mesh v1"
FIELD_HEADER = "oscilla-field v1"
BOUNDARY_TAGS = ('body', 'farfield', 'inflow', 'outflow')


@dataclass
class Mesh:
    """Simplicial mesh of the truncated fluid domain with tagged boundaries"""

    skfem: object
    geometry: BodyGeometry
    R_trunc: float
    resolution: int
    wake_angle_deg: float = MESH_WAKE_ANGLE_DEG
    grading: float = MESH_GRADING
    outflow_angle_deg: float = MESH_OUTFLOW_ANGLE_DEG

    @property
    def dimension(self) -> int:
        return self.skfem.p.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return self.skfem.p

    @property
    def cells(self) -> np.ndarray:
        return self.skfem.t

    @property
    def boundaries(self) -> Dict[str, np.ndarray]:
        return self.skfem.boundaries

    @property
    def n_cells(self) -> int:
        return self.skfem.t.shape[1]

    def cell_measures(self) -> np.ndarray:
        return _signed_measures(self.skfem.p, self.skfem.t)

    def volume(self) -> float:
        return float(np.abs(self.cell_measures()).sum())


def _signed_measures(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    d = p.shape[0]
    x0 = p[:, t[0]]
    edges = np.stack([p[:, t[i]] - x0 for i in range(1, d + 1)], axis=-1)  # (d, M, d)
    jac = np.linalg.det(np.moveaxis(edges, 0, 1))  # (M,)
    return jac / (2.0 if d == 2 else 6.0)


def _orient(p: np.ndarray, t: np.ndarray, h_ref: float) -> np.ndarray:
    vol = _signed_measures(p, t)
    flip = vol < 0
    t = t.copy()
    t[[0, 1]] = np.where(flip, t[[1, 0]], t[[0, 1]])
    vol = np.abs(vol)
    bad = np.flatnonzero(vol <= MIN_CELL_MEASURE_RATIO * h_ref ** p.shape[0])
    if bad.size:
        raise MeshError("degenerate cell produced by meshing", cell_id=int(bad[0]))
    return t


def _layer_sizes(h0: float, grading: float, depth: float, h_cap: float):
    """Offsets d_j and sizes h_j of the graded layers"""
    offsets, sizes = [], []
    d, j = 0.0, 0
    while True:
        h = min(h0 * grading ** j, h_cap)
        if d + h + 0.5 * h > depth:
            break
        d += h
        offsets.append(d)
        sizes.append(h)
        j += 1
    return np.array(offsets), np.array(sizes)


def _in_wake(directions: np.ndarray, half_angle: float) -> np.ndarray:
    # wake sits downstream of the body, around -e1
    cosang = -directions[0] / np.linalg.norm(directions, axis=0)
    return cosang >= np.cos(half_angle)


def _body_points_2d(geometry: BodyGeometry, n: int) -> np.ndarray:
    if geometry.kind == 'polygon':
        poly = geometry.vertices
        edges = np.roll(poly, -1, axis=0) - poly
        lengths = np.linalg.norm(edges, axis=1)
        h = lengths.sum() / n
        pts = []
        for a, e, L in zip(poly, edges, lengths):
            k = max(1, int(round(L / h)))
            s = np.arange(k) / k
            pts.append(a[None, :] + s[:, None] * e[None, :])
        return np.vstack(pts).T
    theta = 2 * np.pi * np.arange(n) / n
    dirs = np.vstack([np.cos(theta), np.sin(theta)])
    return dirs * geometry.radius(dirs)


def _fibonacci_sphere(n: int, twist: float = 0.0) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    golden = np.pi * (1 + 5 ** 0.5)
    theta = golden * i + twist
    return np.vstack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def _blend_radius(r_body: np.ndarray, offset: float, r_max: float, R: float) -> np.ndarray:
    # layer turns from body-conforming into a circle as it approaches R
    return r_body + offset * (1.0 + (r_max - r_body) / (R - r_max))


def _points(geometry: BodyGeometry, R: float, resolution: int,
            wake_angle: float, grading: float):
    d = geometry.dimension
    if d == 2:
        body = _body_points_2d(geometry, resolution)
        dense = np.linspace(0, 2 * np.pi, 4097)[:-1]
        ddirs = np.vstack([np.cos(dense), np.sin(dense)])
        ring = ddirs * geometry.radius(ddirs)
        perimeter = np.linalg.norm(np.roll(ring, -1, axis=1) - ring, axis=0).sum()
        h0 = perimeter / body.shape[1]
        h_cap = 2 * np.pi * R / 48
    else:
        dirs_b = _fibonacci_sphere(resolution)
        body = dirs_b * geometry.radius(dirs_b)
        axes = geometry.semi_axes
        area = 4 * np.pi * (((axes[0] * axes[1]) ** 1.6 + (axes[0] * axes[2]) ** 1.6
                             + (axes[1] * axes[2]) ** 1.6) / 3) ** (1 / 1.6)
        h0 = np.sqrt(4 * area / (np.sqrt(3) * 2 * resolution))
        h_cap = np.sqrt(4 * np.pi * R ** 2 / 200)

    r_max = float(np.linalg.norm(body, axis=0).max())
    if R <= r_max + 2 * h0:
        raise ValidationError("R_trunc too small for the body at this resolution")
    offsets, sizes = _layer_sizes(h0, grading, R - r_max, h_cap)

    pts = [body]
    for j, (off, h) in enumerate(zip(offsets, sizes)):
        r_mean = r_max + off
        if d == 2:
            n_j = max(resolution, int(np.ceil(2 * np.pi * r_mean / h)))
            theta = 2 * np.pi * (np.arange(n_j) + 0.5 * (j % 2)) / n_j
            dirs = np.vstack([np.cos(theta), np.sin(theta)])
            theta_w = 2 * np.pi * (np.arange(2 * n_j) + 0.25) / (2 * n_j)
            dirs_w = np.vstack([np.cos(theta_w), np.sin(theta_w)])
        else:
            n_j = max(resolution, int(np.ceil(4 * np.pi * r_mean ** 2 / h ** 2)))
            dirs = _fibonacci_sphere(n_j, twist=0.7 * (j + 1))
            dirs_w = _fibonacci_sphere(4 * n_j, twist=0.3 * (j + 1))
        pts.append(dirs * _blend_radius(geometry.radius(dirs), off, r_max, R))
        wake = _in_wake(dirs_w, wake_angle)
        if np.any(wake) and off + h < R - r_max:
            dw = dirs_w[:, wake]
            pts.append(dw * _blend_radius(geometry.radius(dw), off + 0.5 * h, r_max, R))

    h_last = sizes[-1] if len(sizes) else h0
    if d == 2:
        n_out = max(48, int(np.ceil(2 * np.pi * R / h_last)))
        theta = 2 * np.pi * np.arange(n_out) / n_out
        outer = R * np.vstack([np.cos(theta), np.sin(theta)])
    else:
        n_out = max(200, int(np.ceil(4 * np.pi * R ** 2 / h_last ** 2)))
        outer = R * _fibonacci_sphere(n_out, twist=0.1)
    pts.append(outer)
    return np.hstack(pts), body.shape[1], h0


def _tag_boundaries(m, n_body: int, R: float, outflow_angle: float):
    bfacets = m.boundary_facets()
    mid = m.p[:, m.facets[:, bfacets]].mean(axis=1)
    radius = np.linalg.norm(mid, axis=0)
    is_body = radius < 0.5 * R
    body = bfacets[is_body]
    far = bfacets[~is_body]
    out_mask = _in_wake(mid[:, ~is_body], outflow_angle)
    outflow = far[out_mask]
    inflow = far[~out_mask]

    d = m.p.shape[0]
    expected = n_body if d == 2 else 2 * n_body - 4
    if np.any(m.facets[:, body] >= n_body) or body.size != expected:
        raise MeshError(f"meshing failure: body boundary not recovered "
                        f"({body.size} facets, expected {expected})")
    if outflow.size == 0:
        raise MeshError("meshing failure: empty outflow sector")
    return {'body': body, 'farfield': far, 'inflow': inflow, 'outflow': outflow}


def _skfem_mesh(p: np.ndarray, t: np.ndarray):
    return MeshTri(p, t) if p.shape[0] == 2 else MeshTet(p, t)


def build_truncated_domain(geometry: BodyGeometry, R_trunc: float, resolution: int,
                           wake_angle_deg: float = MESH_WAKE_ANGLE_DEG,
                           grading: float = MESH_GRADING,
                           outflow_angle_deg: float = MESH_OUTFLOW_ANGLE_DEG) -> Mesh:
    """
    Mesh Omega_R = Omega intersected with the ball of radius R_trunc
    resolution is the number of body boundary points
    """
    R_star = geometry.characteristic_diameter
    if R_trunc < 5 * R_star:
        raise ValidationError(f"R_trunc must be at least 5*R* = {5 * R_star:g} (got {R_trunc:g})")
    if resolution < 8:
        raise ValidationError("mesh resolution must be at least 8")
    if grading < 1.0:
        raise ValidationError("mesh grading must be >= 1")
    if not 0 < outflow_angle_deg < 90:
        raise ValidationError("outflow_angle_deg must lie in (0, 90)")

    pts, n_body, h0 = _points(geometry, float(R_trunc), int(resolution),
                              np.deg2rad(wake_angle_deg), float(grading))
    tri = Delaunay(pts.T)
    t = tri.simplices.T.copy()
    centroids = pts[:, t].mean(axis=1)
    t = t[:, ~geometry.contains(centroids)]

    used = np.unique(t)
    if used.size != pts.shape[1]:
        if np.any(np.setdiff1d(np.arange(n_body), used).size):
            raise MeshError("meshing failure: body point left unconnected")
        remap = -np.ones(pts.shape[1], dtype=int)
        remap[used] = np.arange(used.size)
        pts, t = pts[:, used], remap[t]

    t = _orient(pts, t, h0)
    m = _skfem_mesh(pts, t)
    m = m.with_boundaries(_tag_boundaries(m, n_body, R_trunc, np.deg2rad(outflow_angle_deg)))

    mesh = Mesh(m, geometry, float(R_trunc), int(resolution),
                float(wake_angle_deg), float(grading), float(outflow_angle_deg))
    logger.info("Built %dD mesh: %d nodes, %d cells, %d body facets",
                mesh.dimension, pts.shape[1], mesh.n_cells, m.boundaries['body'].size)
    return mesh


def mesh_quality(mesh: Mesh) -> Dict:
    """Cell-size and shape statistics"""
    vol = np.abs(mesh.cell_measures())
    report = {
        'n_nodes': int(mesh.nodes.shape[1]),
        'n_cells': int(mesh.n_cells),
        'min_measure': float(vol.min()),
        'max_measure': float(vol.max()),
        'volume': float(vol.sum()),
        'boundary_facets': {k: int(v.size) for k, v in mesh.boundaries.items()},
    }
    if mesh.dimension == 2:
        p, t = mesh.nodes, mesh.cells
        angles = []
        for i in range(3):
            a = p[:, t[(i + 1) % 3]] - p[:, t[i]]
            b = p[:, t[(i + 2) % 3]] - p[:, t[i]]
            cos = (a * b).sum(0) / (np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
        report['min_angle_deg'] = float(np.min(angles))
    return report


def write_mesh(mesh: Mesh, path: str) -> None:
    """Write the mesh in the oscilla-mesh v1 text format"""
    p, t = mesh.nodes, mesh.cells
    m = mesh.skfem
    lines = [f"{MESH_HEADER} d={mesh.dimension}",
             f"R_trunc {mesh.R_trunc!r}",
             f"geometry {mesh.geometry.kind} {json.dumps(mesh.geometry.params, sort_keys=True)}",
             f"resolution {mesh.resolution} {mesh.wake_angle_deg!r} {mesh.grading!r} {mesh.outflow_angle_deg!r}",
             f"nodes {p.shape[1]}"]
    lines += [' '.join(repr(float(c)) for c in col) for col in p.T]
    lines.append(f"cells {t.shape[1]}")
    lines += [' '.join(str(int(v)) for v in col) for col in t.T]
    tagged = [(tag, f) for tag in BOUNDARY_TAGS for f in m.boundaries[tag]]
    lines.append(f"facets {len(tagged)}")
    lines += [tag + ' ' + ' '.join(str(int(v)) for v in m.facets[:, f]) for tag, f in tagged]
    with open(path, 'w') as fh:
        fh.write('\n'.join(lines) + '\n')


def read_mesh(path: str) -> Mesh:
    """Read a mesh written by write_mesh; inverted cells are rejected"""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if ' '.join(head[:2]) != MESH_HEADER or not head[2].startswith('d='):
        raise ValidationError(f"not an {MESH_HEADER} file: {path}")
    d = int(head[2][2:])

    R_trunc = float(lines[1].split()[1])
    _, kind, params = lines[2].split(' ', 2)
    geometry = make_geometry(kind, json.loads(params))
    res = lines[3].split()
    pos = 4

    n_nodes = int(lines[pos].split()[1])
    p = np.array([[float(v) for v in ln.split()] for ln in lines[pos + 1:pos + 1 + n_nodes]]).T
    pos += 1 + n_nodes
    n_cells = int(lines[pos].split()[1])
    t = np.array([[int(v) for v in ln.split()] for ln in lines[pos + 1:pos + 1 + n_cells]]).T
    pos += 1 + n_cells
    if p.shape[0] != d or t.shape[0] != d + 1:
        raise ValidationError("mesh block shapes do not match the declared dimension")

    vol = _signed_measures(p, t)
    bad = np.flatnonzero(vol <= 0)
    if bad.size:
        raise MeshError("inverted cell in mesh file", cell_id=int(bad[0]))

    m = _skfem_mesh(p, t)
    lookup = {tuple(sorted(col)): i for i, col in enumerate(m.facets.T)}
    n_facets = int(lines[pos].split()[1])
    tags: Dict[str, list] = {tag: [] for tag in BOUNDARY_TAGS}
    for ln in lines[pos + 1:pos + 1 + n_facets]:
        parts = ln.split()
        key = tuple(sorted(int(v) for v in parts[1:]))
        if key not in lookup:
            raise MeshError(f"tagged facet {key} is not a mesh facet")
        tags[parts[0]].append(lookup[key])
    m = m.with_boundaries({tag: np.array(v, dtype=int) for tag, v in tags.items()})
    return Mesh(m, geometry, R_trunc, int(res[1]), float(res[2]), float(res[3]), float(res[4]))


def write_field(path: str, mesh: Mesh, columns: Dict[str, np.ndarray], header: Optional[Dict] = None) -> None:
    """Write vertex-aligned field values (one row per mesh node)"""
    names = list(columns)
    meta = ' '.join(f"{k}={v}" for k, v in (header or {}).items())
    lines = [f"{FIELD_HEADER} d={mesh.dimension} nodes={mesh.nodes.shape[1]} {meta}".rstrip()]
    coords = ['x', 'y', 'z'][:mesh.dimension]
    lines.append(' '.join(coords + names))
    data = np.vstack([mesh.nodes] + [np.asarray(columns[n], dtype=float)[None, :] for n in names])
    lines += [' '.join(format(v, '.16e') for v in row) for row in data.T]
    with open(path, 'w') as fh:
        fh.write('\n'.join(lines) + '\n')
