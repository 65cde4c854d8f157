"""Theorem studies: plasticity limit, continuous dependence, contraction and the L1 bound."""

import numpy as np
import pytest

from conftest import make_model, make_operator
from neuralfield.discretization import make_initial_state
from neuralfield.errors import ValidationError
from neuralfield.experiments import (StudyResult, apply_A, continuous_dependence_study, contraction_measure,
                                     l1_bound_study, plasticity_limit_study)
from neuralfield.field_model import compute_constants
from neuralfield.solver import SolverConfig


EULER = SolverConfig(method='exp-euler', dt=0.05, t_end=5.0)


@pytest.fixture
def plastic_model():
    return make_model(gamma=1.0)


# ============================================================================
# Study Result
# ============================================================================

def test_verdict_and_report():
    result = StudyResult(name='demo', rows=[], passed=True, worst_margin=0.5, slack=0.1,
                         fitted_slope=1.02, r_squared=0.999, notes={'q': 0.3})
    verdict = result.verdict()
    assert verdict['pass'] is True
    assert verdict['fitted_slope'] == 1.02
    assert verdict['q'] == 0.3
    assert 'PASS' in result.report()
    assert 'slope 1.0200' in result.report()


# ============================================================================
# Plasticity Limit
# ============================================================================

def test_plasticity_limit_decays_linearly(op, bump):
    result = plasticity_limit_study(make_model(), op, bump, cfg=EULER)
    d = [row['measured'] for row in result.rows]
    assert [row['gamma'] for row in result.rows] == [0.4, 0.2, 0.1, 0.05, 0.025]
    assert all(a > b for a, b in zip(d, d[1:]))
    assert d[-1] < d[0] / 8
    assert result.fitted_slope == pytest.approx(1.0, abs=0.15)
    assert result.passed


def test_plasticity_limit_vanishes_at_zero_gamma(small_op):
    bump = make_initial_state(small_op.grid, 'gaussian-bump')
    result = plasticity_limit_study(make_model(), small_op, bump, gammas=[0.2, 0.1, 0.0], cfg=EULER)
    assert result.rows[-1]['gamma'] == 0.0
    assert result.rows[-1]['measured'] == 0.0
    assert result.rows[0]['measured'] > 0.0


def test_plasticity_limit_with_varied_initial_data(small_op):
    bump = make_initial_state(small_op.grid, 'gaussian-bump')
    result = plasticity_limit_study(make_model(), small_op, bump, gammas=[0.2, 0.1, 0.05], cfg=EULER,
                                    vary_initial=True)
    assert result.notes['vary_initial'] is True
    d = [row['measured'] for row in result.rows]
    assert d[0] > d[1] > d[2] > 0.0


@pytest.mark.parametrize('gammas', [[0.1, 0.2], [0.2, 0.2], [], [0.1, -0.1]])
def test_plasticity_limit_rejects_bad_gamma_lists(small_op, gammas):
    bump = make_initial_state(small_op.grid, 'gaussian-bump')
    with pytest.raises(ValidationError):
        plasticity_limit_study(make_model(), small_op, bump, gammas=gammas, cfg=EULER)


# ============================================================================
# Continuous Dependence
# ============================================================================

def test_continuous_dependence_within_constant(plastic_model, op, bump):
    result = continuous_dependence_study(plastic_model, op, bump, rho=0.1)
    assert result.notes['q'] == pytest.approx(0.32, abs=0.01)
    assert result.notes['dependence_constant'] == pytest.approx(1.0 / (1.0 - result.notes['q']))
    assert result.passed
    for row in result.rows:
        assert row['ratio'] <= 1.4706 + result.slack
    assert result.notes['ratio_spread'] < 0.1


def test_zero_perturbation_gives_identical_runs(plastic_model, small_op):
    bump = make_initial_state(small_op.grid, 'gaussian-bump')
    result = continuous_dependence_study(plastic_model, small_op, bump, epsilons=[0.0], rho=0.1)
    assert result.rows[0]['measured'] == 0.0
    assert result.rows[0]['ratio'] is None
    assert result.passed


# ============================================================================
# Contraction
# ============================================================================

def test_contraction_ratios_below_q(plastic_model, op):
    result = contraction_measure(plastic_model, op, rho=0.1, n_pairs=200, seed=7)
    assert len(result.rows) == 200
    assert result.notes['q'] == pytest.approx(0.32, abs=0.01)
    assert result.notes['max_ratio'] <= 0.33
    assert result.passed


def test_contraction_skips_identical_pairs(plastic_model, small_op):
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-1.0, 1.0, (2, 11, small_op.grid.node_count))
    result = contraction_measure(plastic_model, small_op, rho=0.1, pairs=[(a, a), (a, b)])
    assert result.notes['skipped'] == 1
    assert len(result.rows) == 1


def test_contraction_factor_grows_with_gamma(small_op):
    constants = compute_constants(make_model(), small_op.grid, small_op.quad)
    base = contraction_measure(make_model(gamma=1.0), small_op, rho=0.1, n_pairs=2)
    doubled = contraction_measure(make_model(gamma=2.0), small_op, rho=0.1, n_pairs=2)
    expected = 0.1 * (constants.L + 2.0 * constants.K) * constants.c_w
    assert doubled.notes['q'] - base.notes['q'] == pytest.approx(expected, rel=1e-12)


def test_apply_A_starts_at_zero(plastic_model, small_op):
    field_values = np.ones((5, small_op.grid.node_count))
    out = apply_A(plastic_model, small_op, field_values, 0.025)
    assert out.shape == field_values.shape
    assert np.all(out[0] == 0.0)


# ============================================================================
# L1 Bound
# ============================================================================

def test_l1_bound_study(plastic_model, op):
    starts = {
        'zero': make_initial_state(op.grid, 'constant', {'value': 0.0}),
        'step': make_initial_state(op.grid, 'step', {'value': 1.0}),
        'bump': make_initial_state(op.grid, 'gaussian-bump', {'amplitude': 2.0}),
    }
    result = l1_bound_study(plastic_model, op, starts, cfg=SolverConfig(method='exp-euler', dt=0.1, t_end=10.0))
    assert result.passed
    assert [row['initial'] for row in result.rows] == ['bump', 'step', 'zero']
    for row in result.rows:
        assert row['finite']
        assert row['bound'] > row['bound_without_gamma']
        assert row['exceeds_bound_without_gamma'] == (row['measured'] > row['bound_without_gamma'] + result.slack)
    zero = result.rows[-1]
    assert zero['u0_l1'] == 0.0
    # at gamma = 1 the step datum overshoots the bound without the (1+gamma) factor
    assert 'step' in result.notes['bound_without_gamma_exceeded']
    assert 'above the bound without (1+gamma) for' in result.report()


def test_l1_bound_on_unit_interval():
    op = make_operator(nodes=51, bounds=(0.0, 1.0))
    model = make_model(gamma=0.0)
    start = {'flat': make_initial_state(op.grid, 'constant', {'value': 0.3})}
    result = l1_bound_study(model, op, start, cfg=SolverConfig(method='exp-euler', dt=0.1, t_end=5.0))
    row = result.rows[0]
    assert row['u0_l1'] == pytest.approx(0.3)
    c_w = max(compute_constants(model, op.grid, op.quad).c_w, op.max_abs_row_sum)
    assert row['bound'] == pytest.approx(0.3 + c_w)
    assert result.passed
    assert result.notes['bound_without_gamma_exceeded'] == []
