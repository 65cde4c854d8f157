"""Stationary states by damped fixed point and long-time flow, equicontinuity moduli."""

import logging

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit

from conftest import make_model, make_operator
from neuralfield.discretization import FieldState, Grid, apply_F, build_operator, build_quadrature, make_initial_state
from neuralfield.errors import DimensionMismatchError, MaxIterExceededError, NotSettledError, ValidationError
from neuralfield.field_model import FiringRate, SynapticKernel
from neuralfield.solver import SolverConfig, Trajectory, solve_global, step_exp_euler, step_rk4
from neuralfield.stationary import equicontinuity_probe, find_stationary_fp, stationary_via_flow


@pytest.fixture
def instance():
    op = make_operator(nodes=101)
    model = make_model(gamma=0.2)
    u_init = make_initial_state(op.grid, 'gaussian-bump', {'amplitude': 1.0, 'width': 2.0})
    return model, op, u_init


# ============================================================================
# Damped Fixed Point
# ============================================================================

def test_zero_firing_converges_in_one_update(small_op):
    model = make_model(firing=FiringRate('clamped', ceiling=0.0))
    u_init = make_initial_state(small_op.grid, 'gaussian-bump')
    result = find_stationary_fp(model, small_op, u_init, damping=1.0)
    assert result.converged
    assert result.iterations == 1
    assert np.all(result.u_inf.values == 0.0)


def test_fixed_point_residual(instance):
    model, op, u_init = instance
    result = find_stationary_fp(model, op, u_init)
    assert result.converged
    assert result.method == 'damped-fp'
    assert result.residual_sup < 1e-8
    assert np.max(np.abs(apply_F(model, op, result.u_inf))) < 1e-8


def test_fixed_point_reports_best_state_on_budget_exhaustion(instance):
    model, op, u_init = instance
    with pytest.raises(MaxIterExceededError) as info:
        find_stationary_fp(model, op, u_init, max_iter=3)
    result = info.value.result
    assert not result.converged
    assert result.iterations == 3
    assert np.isfinite(result.residual_sup)


def test_invalid_damping(instance):
    model, op, u_init = instance
    with pytest.raises(ValidationError):
        find_stationary_fp(model, op, u_init, damping=0.0)


def test_strong_plasticity_warns(caplog, small_op):
    model = make_model(gamma=1.5)
    u_init = make_initial_state(small_op.grid, 'gaussian-bump')
    with caplog.at_level(logging.WARNING):
        with pytest.raises(MaxIterExceededError):
            find_stationary_fp(model, small_op, u_init, max_iter=1)
    assert any('gamma*C_w' in record.message for record in caplog.records)


# ============================================================================
# Flow
# ============================================================================

def test_flow_agrees_with_fixed_point(instance):
    model, op, u_init = instance
    fp = find_stationary_fp(model, op, u_init)
    flow = stationary_via_flow(model, op, u_init)
    assert flow.converged
    assert flow.method == 'flow'
    assert np.max(np.abs(flow.u_inf.values - fp.u_inf.values)) < 1e-6


def test_flow_samples_on_geometric_times(instance):
    model, op, u_init = instance
    flow = stationary_via_flow(model, op, u_init, dt=0.5)
    times = [s.t for s in flow.samples]
    assert times[:4] == [0.5, 1.0, 2.0, 4.0]
    assert all(b == 2 * a for a, b in zip(times, times[1:]))


def test_flow_from_stationary_state_settles_immediately(instance):
    model, op, u_init = instance
    fp = find_stationary_fp(model, op, u_init, tol=1e-12)
    flow = stationary_via_flow(model, op, FieldState(values=fp.u_inf.values), settle_tol=1e-10)
    assert flow.t_settle == 0.0
    assert flow.iterations == 0


def test_flow_matches_scalar_equilibrium():
    op = make_operator(nodes=50, bounds=(0.0, 10.0), boundary='periodic')
    model = make_model(gamma=0.0)
    c = float(np.mean(op.matrix.sum(axis=1)))
    expected = brentq(lambda u: u - c * expit(u), 0.0, c + 1.0, xtol=1e-15)
    u0 = make_initial_state(op.grid, 'constant', {'value': 0.0})
    flow = stationary_via_flow(model, op, u0)
    np.testing.assert_allclose(flow.u_inf.values, expected, rtol=0, atol=1e-8)


def test_fixed_point_matches_scalar_oracle_for_constant_kernel():
    # w = c on [0, 1] with gamma = 0: u_inf is the constant solving u = c f(u)
    grid = Grid(bounds=((0.0, 1.0),), nodes_per_axis=(21,))
    c = 2.0
    op = build_operator(SynapticKernel('tabulated', matrix=np.full((21, 21), c)), grid, build_quadrature(grid))
    expected = brentq(lambda u: u - c * expit(u), 0.0, c, xtol=1e-15)
    u_init = make_initial_state(grid, 'random', {'low': -1.0, 'high': 1.0}, seed=5)
    result = find_stationary_fp(make_model(gamma=0.0), op, u_init, tol=1e-13)
    assert result.converged
    np.testing.assert_allclose(result.u_inf.values, expected, rtol=0, atol=1e-10)


def test_flow_not_settled(instance):
    model, op, u_init = instance
    with pytest.raises(NotSettledError) as info:
        stationary_via_flow(model, op, u_init, t_max=1.0)
    assert info.value.result is not None
    assert not info.value.result.converged


def test_stationary_state_is_fixed_point_of_every_stepper(instance):
    model, op, u_init = instance
    u_inf = find_stationary_fp(model, op, u_init, tol=1e-12).u_inf
    state = FieldState(values=u_inf.values)
    for stepper in (step_exp_euler, step_rk4):
        drift = np.max(np.abs(stepper(model, op, state, 0.1).values - state.values))
        assert drift < 1e-10
    picard = solve_global(model, op, state, SolverConfig(method='picard', dt=0.01, t_end=0.2))
    assert np.max(np.abs(picard.final.values - state.values)) < 1e-9


# ============================================================================
# Equicontinuity
# ============================================================================

def test_constant_trajectory_has_zero_moduli(small_op):
    states = [FieldState(values=np.full(small_op.grid.node_count, 0.3), t=t) for t in (0.0, 1.0)]
    table = equicontinuity_probe(Trajectory(states=states), small_op.grid)
    assert table.moduli == [0.0, 0.0, 0.0, 0.0]
    assert table.monotone


def test_bump_trajectory_moduli(instance):
    model, op, u_init = instance
    traj = solve_global(model, op, u_init, SolverConfig(method='rk4', dt=0.1, t_end=2.0))
    table = equicontinuity_probe(traj, op.grid, gamma_cw=0.2)
    assert table.offsets == [1, 2, 4, 8]
    assert table.spacings[0] == pytest.approx(op.grid.h)
    assert table.moduli[0] < table.moduli[-1]
    # slopes of the bump and of J(u) stay below 2
    assert table.moduli[0] <= 2.0 * op.grid.h
    assert table.gamma_cw == 0.2
    assert [row['k'] for row in table.rows()] == [1, 2, 4, 8]


def test_equicontinuity_needs_one_dimensional_grid():
    grid = Grid(dimension=2, bounds=((0.0, 1.0), (0.0, 1.0)), nodes_per_axis=(5, 5))
    traj = Trajectory(states=[FieldState(values=np.zeros(25))])
    with pytest.raises(DimensionMismatchError):
        equicontinuity_probe(traj, grid)
