"""Shared fixtures: the standard sigmoid/exponential instance on small grids."""

import math
import os
import sys

import pytest

# Repository root on sys.path so `neuralfield` imports without installation
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from neuralfield.discretization import Grid, build_operator, build_quadrature, make_initial_state  # noqa: E402
from neuralfield.field_model import (FiringRate, LearningKernel, ModelSpec, SynapticKernel,  # noqa: E402
                                     TheoryConstants)


# L = 1/4, K = sqrt(2/e), C_w = 1
UNIT_CONSTANTS = TheoryConstants(c_inf=0.5, c_w=1.0, k_w=1.0, L=0.25, K=math.sqrt(2.0 / math.e))


def make_model(gamma=0.5, kernel=None, firing=None):
    return ModelSpec(w=kernel or SynapticKernel('exponential', amplitude=0.5, decay=1.0),
                     f=firing or FiringRate('sigmoid', slope=1.0, threshold=0.0),
                     g=LearningKernel('gaussian', width=1.0), gamma=gamma)


def make_operator(nodes=101, bounds=(-10.0, 10.0), rule='trapezoid', kernel=None, boundary='compact'):
    grid = Grid(dimension=1, bounds=(bounds,), nodes_per_axis=(nodes,), boundary=boundary)
    quad = build_quadrature(grid, rule)
    return build_operator(kernel or SynapticKernel('exponential', amplitude=0.5, decay=1.0), grid, quad)


@pytest.fixture
def model():
    return make_model(gamma=0.5)


@pytest.fixture
def small_op():
    return make_operator(nodes=41)


@pytest.fixture
def op():
    return make_operator(nodes=101)


@pytest.fixture
def bump(op):
    return make_initial_state(op.grid, 'gaussian-bump', {'amplitude': 1.0, 'width': 2.0})


@pytest.fixture
def unit_constants():
    return UNIT_CONSTANTS
