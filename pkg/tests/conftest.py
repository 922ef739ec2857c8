"""
Shared fixtures: a tiny 2D mesh around a circle and the operators built on it
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core_model import make_geometry, model_from_values
from src.discretization import DiscreteSpace, assemble_fsi_operators
from src.fsi_system import FsiProblem
from src.mesh import build_truncated_domain

TINY_R = 5.0
TINY_RESOLUTION = 12
TINY_GRADING = 1.5


@pytest.fixture(scope='session')
def circle():
    return make_geometry('circle', {'diameter': 1.0})


@pytest.fixture(scope='session')
def tiny_mesh(circle):
    return build_truncated_domain(circle, TINY_R, TINY_RESOLUTION, grading=TINY_GRADING)


@pytest.fixture(scope='session')
def model():
    return model_from_values(5.0, 1.0, [1.0, 0.0, 0.0, 2.0], 2, 'circle', {'diameter': 1.0})


@pytest.fixture(scope='session')
def fixed_model():
    return model_from_values(5.0, 1.0, [1.0, 0.0, 0.0, 1.0], 2, 'circle', {'diameter': 1.0}, fixed_body=True)


@pytest.fixture(scope='session')
def space(tiny_mesh):
    return DiscreteSpace(tiny_mesh)


@pytest.fixture(scope='session')
def ops(tiny_mesh, space, model):
    return assemble_fsi_operators(tiny_mesh, space, model)


@pytest.fixture(scope='session')
def problem(model, tiny_mesh, space, ops):
    return FsiProblem(model, tiny_mesh, space, ops)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
