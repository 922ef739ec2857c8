import numpy as np
import pytest

from src.errors import MeshError, ValidationError
from src.mesh import build_truncated_domain, mesh_quality, read_mesh, write_field, write_mesh


def test_boundary_tags(tiny_mesh):
    b = tiny_mesh.boundaries
    assert set(b) >= {'body', 'farfield', 'inflow', 'outflow'}
    assert b['body'].size == 12
    assert b['inflow'].size + b['outflow'].size == b['farfield'].size


def test_outflow_sector_is_downstream(tiny_mesh):
    m = tiny_mesh.skfem
    mid = m.p[:, m.facets[:, tiny_mesh.boundaries['outflow']]].mean(axis=1)
    assert np.all(mid[0] < 0)


def test_cells_positively_oriented(tiny_mesh):
    assert np.all(tiny_mesh.cell_measures() > 0)


def test_volume_matches_annulus(tiny_mesh):
    exact = np.pi * (5.0 ** 2 - 0.5 ** 2)
    assert tiny_mesh.volume() == pytest.approx(exact, rel=0.1)


def test_quality_report(tiny_mesh):
    q = mesh_quality(tiny_mesh)
    assert q['n_cells'] == tiny_mesh.n_cells
    assert q['min_angle_deg'] > 0.0


def test_truncation_radius_too_small(circle):
    with pytest.raises(ValidationError, match='R_trunc'):
        build_truncated_domain(circle, 4.0, 12)


def test_mesh_file_round_trip(tiny_mesh, tmp_path):
    path = tmp_path / 'tiny.mesh'
    write_mesh(tiny_mesh, str(path))
    again = read_mesh(str(path))
    np.testing.assert_array_equal(again.nodes, tiny_mesh.nodes)
    for tag in ('body', 'inflow', 'outflow'):
        assert again.boundaries[tag].size == tiny_mesh.boundaries[tag].size


def test_inverted_cell_reported(tiny_mesh, tmp_path):
    path = tmp_path / 'bad.mesh'
    write_mesh(tiny_mesh, str(path))
    lines = path.read_text().splitlines()
    start = next(i for i, ln in enumerate(lines) if ln.startswith('cells')) + 1
    a, b, c = lines[start].split()
    lines[start] = f'{b} {a} {c}'
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(MeshError) as info:
        read_mesh(str(path))
    assert info.value.cell_id == 0


def test_field_file_has_one_row_per_node(tiny_mesh, tmp_path):
    path = tmp_path / 'f.dat'
    n = tiny_mesh.nodes.shape[1]
    write_field(str(path), tiny_mesh, {'p': np.arange(n, dtype=float)}, {'lambda': 1})
    lines = path.read_text().splitlines()
    assert lines[1].split() == ['x', 'y', 'p']
    assert len(lines) == n + 2
