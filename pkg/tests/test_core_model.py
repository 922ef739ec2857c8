import numpy as np
import pytest

from src.core_model import (PhysicalParams, make_geometry, model_from_values, nondimensionalize,
                            normalization_report, stiffness_bounds, validate_params)
from src.errors import ValidationError


def test_nondimensionalize_scaling_2d():
    p = PhysicalParams(body_mass=2.0, fluid_density=1.0, kinematic_viscosity=0.5, length_scale=1.0,
                       freestream_speed=3.0, stiffness=np.diag([4.0, 9.0, 1.0]))
    m = nondimensionalize(p, 2)
    assert m.lam == pytest.approx(6.0)
    assert m.varpi == pytest.approx(0.5)
    np.testing.assert_allclose(m.A, np.diag([8.0, 18.0]))
    assert m.geometry.kind == 'circle'


def test_nondimensionalize_rejects_nonpositive_inputs():
    p = PhysicalParams(0.0, 1.0, 1.0, 1.0, 1.0, np.eye(2))
    with pytest.raises(ValidationError, match='body_mass'):
        nondimensionalize(p, 2)


def test_stiffness_bounds():
    b = stiffness_bounds(np.diag([1.0, 4.0]))
    assert b.a == pytest.approx(1.0)
    assert b.b == pytest.approx(4.0)
    np.testing.assert_allclose(b.natural_frequencies, [1.0, 2.0])


@pytest.mark.parametrize('A, message', [
    ([[1.0, 0.5], [0.0, 1.0]], 'not symmetric'),
    ([[1.0, 0.0], [0.0, -1.0]], 'not positive definite'),
])
def test_invalid_stiffness(A, message):
    with pytest.raises(ValidationError, match=message):
        model_from_values(1.0, 1.0, A, 2, 'circle')


def test_negative_varpi_rejected():
    with pytest.raises(ValidationError, match='varpi negative'):
        model_from_values(1.0, -0.1, [1, 0, 0, 1], 2, 'circle')


def test_negative_lambda_rejected():
    with pytest.raises(ValidationError, match='lambda negative'):
        model_from_values(-1.0, 1.0, [1, 0, 0, 1], 2, 'circle')


def test_geometry_dimension_mismatch():
    with pytest.raises(ValidationError, match='does not match dimension'):
        model_from_values(1.0, 1.0, np.eye(3).ravel(), 3, 'circle')


def test_polygon_is_recentred_and_oriented():
    g = make_geometry('polygon', {'points': [[1, 1], [3, 1], [3, 3], [1, 3]][::-1]})
    pts = np.asarray(g.params['points'])
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=1e-12)


def test_self_intersecting_polygon_rejected():
    with pytest.raises(ValidationError, match='self-intersects'):
        make_geometry('polygon', {'points': [[-1, -1], [1, 1], [1, -1], [-1, 1]]})


def test_unknown_geometry_kind():
    with pytest.raises(ValidationError, match="unknown geometry.kind"):
        make_geometry('torus')


def test_with_lambda_keeps_other_fields(model):
    other = model.with_lambda(7.5)
    assert other.lam == 7.5
    assert other.varpi == model.varpi
    np.testing.assert_array_equal(other.A, model.A)


def test_normalization_report(model):
    report = normalization_report(validate_params(model))
    assert report['varpi_convention'].startswith('rho*L^2')
    assert report['stiffness_a'] == pytest.approx(1.0)
    assert report['stiffness_b'] == pytest.approx(2.0)
