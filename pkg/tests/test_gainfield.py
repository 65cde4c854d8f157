"""Learned kernel, Mercer decomposition, gain-field dynamics and the Schrödinger cross-check."""

import math

import numpy as np
import pytest

from conftest import make_model
from neuralfield.discretization import Grid, build_quadrature, make_initial_state
from neuralfield.errors import BoxTooSmallError, NoBoundStateError, NotPSDError, ValidationError
from neuralfield.gainfield import (GainField, LearnedKernel, PotentialSpec, build_learned_kernel,
                                   greens_identity_check, mercer_decompose, presynaptic_gain, reconstruction_error,
                                   richardson_energy, schrodinger_cross_check, schrodinger_fd, simulate_gainfield,
                                   square_well_ground_energy, truncation_errors)
from neuralfield.solver import SolverConfig, solve_global


def _line(a, b, n):
    return Grid(bounds=((a, b),), nodes_per_axis=(n,))


@pytest.fixture
def bump_kernel(small_op):
    u = make_initial_state(small_op.grid, 'gaussian-bump', {'amplitude': 1.0, 'width': 2.0})
    return build_learned_kernel(u, make_model(gamma=0.5), small_op.grid)


# ============================================================================
# Learned Kernel
# ============================================================================

def test_learned_kernel_without_plasticity_is_one(small_op):
    u = make_initial_state(small_op.grid, 'random', seed=2)
    G = build_learned_kernel(u, make_model(gamma=0.0), small_op.grid)
    assert np.all(G.matrix == 1.0)


def test_learned_kernel_of_constant_state(small_op):
    u = make_initial_state(small_op.grid, 'constant', {'value': 0.8})
    G = build_learned_kernel(u, make_model(gamma=0.5), small_op.grid)
    np.testing.assert_array_equal(G.matrix, 1.5)
    depressed = build_learned_kernel(u, make_model(gamma=0.5), small_op.grid, sign=-1)
    np.testing.assert_array_equal(depressed.matrix, 0.5)


def test_learned_kernel_of_bump(bump_kernel):
    M = bump_kernel.matrix
    np.testing.assert_array_equal(np.diag(M), 1.5)
    assert np.all((M >= 1.0) & (M <= 1.5))
    np.testing.assert_array_equal(M, M.T)


def test_learned_kernel_rejects_bad_sign(small_op):
    u = make_initial_state(small_op.grid, 'constant')
    with pytest.raises(ValidationError):
        build_learned_kernel(u, make_model(), small_op.grid, sign=0)


# ============================================================================
# Mercer
# ============================================================================

def test_constant_kernel_has_one_mode():
    grid = _line(0.0, 1.0, 11)
    eig = mercer_decompose(LearnedKernel(matrix=np.ones((11, 11)), grid=grid, gamma=0.0), build_quadrature(grid))
    assert eig.values[0] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(eig.vectors[:, 0], 1.0, rtol=0, atol=1e-10)
    assert np.all(np.abs(eig.values[1:]) < 1e-12)


def test_mercer_decomposition_contract(bump_kernel, small_op):
    eig = mercer_decompose(bump_kernel, small_op.quad)
    assert eig.ordering == 'descending'
    assert np.all(np.diff(eig.values) <= 0)
    assert eig.values[-1] >= -1e-8 * eig.values[0]
    assert np.max(np.abs(eig.gram() - np.eye(len(eig)))) < 1e-10
    assert reconstruction_error(eig, bump_kernel) < 1e-8
    # leading mode carries positive mass
    assert small_op.quad.weights @ eig.vectors[:, 0] > 0


def test_truncation_errors_decrease_to_zero(bump_kernel, small_op):
    eig = mercer_decompose(bump_kernel, small_op.quad)
    errors = truncation_errors(eig)
    assert errors.size == len(eig) + 1
    assert np.all(np.diff(errors) <= 1e-15)
    assert errors[-1] == 0.0
    assert errors[0] == pytest.approx(math.sqrt(np.sum(eig.values ** 2)))


def test_presynaptic_gain_reproduces_kernel_diagonal(bump_kernel, small_op):
    eig = mercer_decompose(bump_kernel, small_op.quad)
    gain = presynaptic_gain(eig, K_pre=2.0)
    np.testing.assert_allclose(gain.phi_pre, 2.0 * 1.5, rtol=1e-8)
    assert gain.rank == len(eig)
    truncated = presynaptic_gain(eig, K_pre=2.0, rank=1)
    assert np.all(truncated.phi_pre <= gain.phi_pre + 1e-12)
    with pytest.raises(ValidationError):
        presynaptic_gain(eig, K_pre=0.0)


def test_negative_definite_kernel_rejected():
    grid = _line(0.0, 1.0, 6)
    G = LearnedKernel(matrix=-np.ones((6, 6)) - np.eye(6), grid=grid, gamma=0.0)
    with pytest.raises(NotPSDError):
        mercer_decompose(G, build_quadrature(grid))


# ============================================================================
# Gain-Field Dynamics
# ============================================================================

def test_unit_gain_matches_plasticity_free_run(small_op):
    model = make_model(gamma=0.7)
    u0 = make_initial_state(small_op.grid, 'gaussian-bump')
    cfg = SolverConfig(method='exp-euler', dt=0.1, t_end=2.0)
    gained = simulate_gainfield(model, small_op, GainField(phi_pre=np.ones(small_op.grid.node_count)), u0, cfg)
    plain = solve_global(make_model(gamma=0.0), small_op, u0, cfg)
    np.testing.assert_array_equal(gained.values, plain.values)


def test_zero_gain_gives_pure_decay(small_op):
    u0 = make_initial_state(small_op.grid, 'gaussian-bump')
    cfg = SolverConfig(method='exp-euler', dt=0.1, t_end=2.0)
    traj = simulate_gainfield(make_model(), small_op, GainField(phi_pre=np.zeros(small_op.grid.node_count)), u0, cfg)
    np.testing.assert_allclose(traj.final.values, math.exp(-2.0) * u0.values, rtol=1e-12, atol=0)


# ============================================================================
# Green's Function
# ============================================================================

def test_greens_identity_converges_at_second_order():
    coarse = greens_identity_check(1.0, _line(-20.0, 20.0, 1001))
    fine = greens_identity_check(1.0, _line(-20.0, 20.0, 2001))
    assert coarse < 5e-3
    assert fine < 1.3e-3
    assert 3.5 <= coarse / fine <= 4.5


def test_greens_identity_other_decay_rate():
    assert greens_identity_check(2.0, _line(-20.0, 20.0, 2001)) < 5e-3


def test_greens_identity_of_zero_source():
    grid = _line(-5.0, 5.0, 101)
    assert greens_identity_check(1.0, grid, h=np.zeros(101)) == 0.0


# ============================================================================
# Schrödinger
# ============================================================================

def test_free_particle_in_a_box():
    grid = _line(0.0, math.pi, 1001)
    free = PotentialSpec('custom-tabulated', values=np.zeros(1001))
    eig = schrodinger_fd(free, grid, n_states=3)
    assert eig.ordering == 'ascending'
    np.testing.assert_allclose(eig.values, [1.0, 4.0, 9.0], rtol=1e-4)
    assert eig.vectors[0, 0] == 0.0 and eig.vectors[-1, 0] == 0.0
    assert np.max(np.abs(eig.gram() - np.eye(3))) < 1e-10


def test_square_well_ground_energy_oracle():
    assert square_well_ground_energy(1.0, 2.0) == pytest.approx(0.79, abs=0.01)
    # decay rate sqrt(V0 - E) close to 1 at the cross-check depth
    assert 1.7402 - square_well_ground_energy(1.0, 1.7402) == pytest.approx(1.0, abs=1e-4)


def test_square_well_energy_with_richardson():
    exact = square_well_ground_energy(1.0, 2.0)
    well = PotentialSpec('square-well', half_width=1.0, height=2.0)
    coarse = schrodinger_fd(well, _line(-15.0, 15.0, 3001)).values[0]
    fine = schrodinger_fd(well, _line(-15.0, 15.0, 6001)).values[0]
    assert abs(fine - exact) < 1e-4
    assert abs(richardson_energy(coarse, fine) - exact) < 1e-5
    assert abs(richardson_energy(coarse, fine) - exact) < abs(fine - exact)


def test_small_box_detected():
    well = PotentialSpec('square-well', half_width=1.0, height=2.0)
    with pytest.raises(BoxTooSmallError):
        schrodinger_fd(well, _line(-2.0, 2.0, 201))
    schrodinger_fd(well, _line(-2.0, 2.0, 201), check_decay=False)


def test_cross_check_recovers_bound_state():
    well = PotentialSpec('square-well', half_width=1.0)
    report = schrodinger_cross_check(1.0, well, _line(-20.0, 20.0, 2001))
    assert abs(report.consistency_gap) < 1e-8
    assert report.v0 == pytest.approx(1.7402, abs=2e-3)
    assert report.energy == pytest.approx(report.v0 - 1.0, abs=1e-7)
    assert report.residual_l2 < 1e-3
    assert report.rayleigh_quotient == pytest.approx(report.v0 - 1.0, abs=1e-6)
    assert set(report.to_dict()) >= {'lambda', 'V0', 'k2', 'E', 'residual_l2', 'rayleigh_quotient'}


def test_cross_check_residual_decreases_with_resolution():
    well = PotentialSpec('square-well', half_width=1.0)
    coarse = schrodinger_cross_check(1.0, well, _line(-20.0, 20.0, 2001))
    fine = schrodinger_cross_check(1.0, well, _line(-20.0, 20.0, 4001))
    assert fine.residual_l2 < 3e-4
    assert fine.residual_l2 < coarse.residual_l2


def test_cross_check_without_bound_state():
    well = PotentialSpec('square-well', half_width=1.0)
    with pytest.raises(NoBoundStateError):
        schrodinger_cross_check(1.0, well, _line(-20.0, 20.0, 401), v0_bracket=(0.1, 0.5))
