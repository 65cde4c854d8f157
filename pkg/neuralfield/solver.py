"""
solver.py - Time evolution of the plastic neural field and runtime bound monitors

Three methods integrate u' = F(u) = -u + J(u):

    picard     segment-wise fixed-point iteration u = u0 + A u, with the time
               integral in A taken by the composite trapezoid rule (its discrete
               fixed point is the Crank-Nicolson trajectory)
    exp-euler  u+ = e^{-dt} u + (1 - e^{-dt}) J(u)
    rk4        classical four-stage Runge-Kutta

Segments are chained with an exact state handoff. monitor_bounds checks the
global sup bound max{|u0|_inf, (1+γ)C_w}, positivity for purely excitatory
kernels and the L¹ bound |u0|_L1 + C_w |Ω| on a finished trajectory.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .discretization import DiscreteOperator, FieldState, apply_F_values, apply_J_values, l1_norm
from .errors import (DimensionMismatchError, MaxIterExceededError, NonContractiveError,
                     NumericalBlowupError, ValidationError)
from .field_model import (ModelSpec, TheoryConstants, compute_constants, contraction_factor,
                          global_bound, l1_bound, max_segment_length)


# ============================================================================
# Constants
# ============================================================================

METHODS = ('picard', 'exp-euler', 'rk4')

BOUND_SLACK = 1e-6
POSITIVITY_TOLERANCE = 1e-10


# ============================================================================
# Data Structures
# ============================================================================

@dataclass(frozen=True)
class SolverConfig:
    """Time integration settings.

    segment_rho=None means max_segment_length(constants, γ, safety).
    """
    method: str = 'picard'
    dt: float = 0.01
    segment_rho: Optional[float] = None
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    t_end: float = 5.0
    safety: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f'Unknown solver method: {self.method} (expected one of {", ".join(METHODS)})')
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f'dt must be > 0, got {self.dt}')
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ValidationError(f't_end must be > 0, got {self.t_end}')
        if self.segment_rho is not None:
            if not (math.isfinite(self.segment_rho) and self.segment_rho > 0):
                raise ValidationError(f'segment_rho must be > 0, got {self.segment_rho}')
            if self.dt > self.segment_rho:
                raise ValidationError(f'dt ({self.dt}) must not exceed segment_rho ({self.segment_rho})')
        if not self.picard_tol > 0:
            raise ValidationError(f'picard_tol must be > 0, got {self.picard_tol}')
        if int(self.picard_max_iter) < 1:
            raise ValidationError(f'picard_max_iter must be >= 1, got {self.picard_max_iter}')
        if not 0.0 < self.safety < 1.0:
            raise ValidationError(f'safety must lie in (0, 1), got {self.safety}')

    def resolve_rho(self, constants: TheoryConstants, gamma: float) -> float:
        if self.segment_rho is not None:
            return self.segment_rho
        return max_segment_length(constants, gamma, self.safety)

    def to_dict(self) -> Dict:
        return {
            'method': self.method, 'dt': self.dt, 'segment_rho': self.segment_rho,
            'picard_tol': self.picard_tol, 'picard_max_iter': self.picard_max_iter,
            't_end': self.t_end, 'safety': self.safety,
        }


@dataclass
class Trajectory:
    states: List[FieldState]
    model: Optional[ModelSpec] = None
    config: Optional[SolverConfig] = None
    segments: List['SegmentSummary'] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def values(self) -> np.ndarray:
        """States stacked as (time, node)."""
        return np.vstack([s.values for s in self.states])

    @property
    def final(self) -> FieldState:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class SegmentSummary:
    t_start: float
    rho: float
    q: float
    iterations: int
    final_update_norm: float
    update_norms: tuple

    @property
    def update_ratios(self) -> List[float]:
        norms = self.update_norms
        return [norms[k] / norms[k - 1] for k in range(1, len(norms)) if norms[k - 1] > 0]


@dataclass
class PicardSegment:
    trajectory: Trajectory
    iterations: int
    final_update_norm: float
    summary: SegmentSummary


@dataclass
class BoundReport:
    sup_observed: float
    bound_theoretical: float
    positivity_violations: int
    positivity_applicable: bool
    within_bound: bool
    c_w: float
    times: np.ndarray = field(repr=False)
    sup_series: np.ndarray = field(repr=False)
    min_series: np.ndarray = field(repr=False)
    l1_series: Optional[np.ndarray] = field(default=None, repr=False)
    l1_bound: Optional[float] = None

    @property
    def margin_series(self) -> np.ndarray:
        return self.bound_theoretical - self.sup_series

    @property
    def l1_within_bound(self) -> Optional[bool]:
        if self.l1_series is None:
            return None
        return bool(np.max(self.l1_series) <= self.l1_bound + BOUND_SLACK)


# ============================================================================
# Helpers
# ============================================================================

def _checked(values: np.ndarray, t: float) -> FieldState:
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise NumericalBlowupError(f'Non-finite state at t={t:.6g} ({bad} node(s))',
                                   snapshot=FieldState(values=values.copy(), t=t, diagnostic=True))
    return FieldState(values=values, t=t)


def _constants_for(model: ModelSpec, op: DiscreteOperator,
                   constants: Optional[TheoryConstants]) -> TheoryConstants:
    if constants is not None:
        return constants
    return compute_constants(model, op.grid, op.quad)


# ============================================================================
# Picard Iteration
# ============================================================================

def picard_segment(model: ModelSpec, op: DiscreteOperator, state0: FieldState, rho: float,
                   cfg: SolverConfig, constants: Optional[TheoryConstants] = None,
                   threads: int = 1) -> PicardSegment:
    """Fixed-point iteration of u(t_n) = u0 + Σ trapezoid F(u)(t_j) over [t0, t0 + ρ].

    The first iterate is u0 at every time node. Iteration stops when the
    sup-over-segment update is below cfg.picard_tol.
    """
    constants = _constants_for(model, op, constants)
    q = contraction_factor(constants, model.gamma, rho)
    if q >= 1.0:
        raise NonContractiveError(q, rho)

    n_steps = max(1, math.ceil(rho / cfg.dt - 1e-9))
    tau = rho / n_steps
    times = [state0.t + k * tau for k in range(n_steps + 1)]
    u0 = state0.values

    F0 = apply_F_values(model, op, u0, threads)
    U = np.tile(u0, (n_steps + 1, 1))
    F = np.tile(F0, (n_steps + 1, 1))
    update_norms: List[float] = []

    for iteration in range(1, int(cfg.picard_max_iter) + 1):
        increments = 0.5 * tau * (F[:-1] + F[1:])
        integral = np.vstack([np.zeros((1, len(u0))), np.cumsum(increments, axis=0)])
        U_new = u0[None, :] + integral
        if not np.all(np.isfinite(U_new)):
            row = int(np.argmax(~np.all(np.isfinite(U_new), axis=1)))
            raise NumericalBlowupError(f'Non-finite Picard iterate at t={times[row]:.6g}',
                                       snapshot=FieldState(values=U_new[row].copy(), t=times[row], diagnostic=True))
        update = float(np.max(np.abs(U_new - U)))
        update_norms.append(update)
        U = U_new
        if update < cfg.picard_tol:
            break
        F = np.vstack([F0] + [apply_F_values(model, op, U[k], threads) for k in range(1, n_steps + 1)])

    summary = SegmentSummary(t_start=state0.t, rho=rho, q=q, iterations=len(update_norms),
                             final_update_norm=update_norms[-1], update_norms=tuple(update_norms))
    states = [state0] + [FieldState(values=U[k], t=times[k]) for k in range(1, n_steps + 1)]
    segment = PicardSegment(trajectory=Trajectory(states=states, model=model, config=cfg, segments=[summary]),
                            iterations=summary.iterations, final_update_norm=summary.final_update_norm,
                            summary=summary)

    logging.debug(f'Picard segment t0={state0.t:.6g} rho={rho:.6g} q={q:.4f}: '
                  f'{summary.iterations} iterations, last update {summary.final_update_norm:.3e}')
    if summary.final_update_norm >= cfg.picard_tol:
        raise MaxIterExceededError(
            f'Picard iteration did not reach tol={cfg.picard_tol:g} in {cfg.picard_max_iter} iterations '
            f'(last update {summary.final_update_norm:.3e})',
            result=segment,
        )
    return segment


# ============================================================================
# Explicit Steppers
# ============================================================================

def step_exp_euler(model: ModelSpec, op: DiscreteOperator, state: FieldState, dt: float,
                   threads: int = 1) -> FieldState:
    """u+ = e^{-dt} u + (1 - e^{-dt}) J(u)."""
    if not dt > 0:
        raise ValidationError(f'dt must be > 0, got {dt}')
    Ju = apply_J_values(model, op, state.values, threads)
    values = math.exp(-dt) * state.values + (-math.expm1(-dt)) * Ju
    return _checked(values, state.t + dt)


def step_rk4(model: ModelSpec, op: DiscreteOperator, state: FieldState, dt: float,
             threads: int = 1) -> FieldState:
    if not dt > 0:
        raise ValidationError(f'dt must be > 0, got {dt}')
    u = state.values
    k1 = apply_F_values(model, op, u, threads)
    k2 = apply_F_values(model, op, u + 0.5 * dt * k1, threads)
    k3 = apply_F_values(model, op, u + 0.5 * dt * k2, threads)
    k4 = apply_F_values(model, op, u + dt * k3, threads)
    values = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _checked(values, state.t + dt)


STEPPERS = {
    'exp-euler': step_exp_euler,
    'rk4': step_rk4,
}


# ============================================================================
# Global Solve
# ============================================================================

def solve_global(model: ModelSpec, op: DiscreteOperator, state0: FieldState, cfg: SolverConfig,
                 constants: Optional[TheoryConstants] = None, threads: int = 1) -> Trajectory:
    """Integrate over [t0, t0 + t_end].

    Picard runs in segments of length ρ (the last one may be shorter); the
    final state of a segment is the initial state of the next one.
    """
    if not state0.finite:
        raise NumericalBlowupError('Initial state is not finite', snapshot=state0)
    if len(state0) != op.grid.node_count:
        raise DimensionMismatchError(f'State has {len(state0)} values but the grid has {op.grid.node_count} nodes')

    if cfg.method == 'picard':
        constants = _constants_for(model, op, constants)
        rho = cfg.resolve_rho(constants, model.gamma)
        n_segments = max(1, math.ceil(cfg.t_end / rho - 1e-9))
        logging.info(f'Picard solve: t_end={cfg.t_end:g}, rho={rho:.6g}, {n_segments} segment(s)')

        states = [state0]
        summaries: List[SegmentSummary] = []
        current = state0
        for k in range(n_segments):
            seg_end = min((k + 1) * rho, cfg.t_end)
            seg_len = seg_end - k * rho
            segment = picard_segment(model, op, current, seg_len, cfg, constants, threads)
            states.extend(segment.trajectory.states[1:])
            summaries.append(segment.summary)
            current = segment.trajectory.final
        return Trajectory(states=states, model=model, config=cfg, segments=summaries)

    stepper = STEPPERS[cfg.method]
    n_steps = max(1, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    dt = cfg.t_end / n_steps
    logging.info(f'{cfg.method} solve: t_end={cfg.t_end:g}, dt={dt:.6g}, {n_steps} step(s)')

    states = [state0]
    current = state0
    for k in range(1, n_steps + 1):
        nxt = stepper(model, op, current, dt, threads)
        # pin times to the uniform lattice
        current = FieldState(values=nxt.values, t=state0.t + k * dt)
        states.append(current)
    return Trajectory(states=states, model=model, config=cfg)


# ============================================================================
# Bound Monitor
# ============================================================================

def monitor_bounds(traj: Trajectory, constants: TheoryConstants, model: ModelSpec,
                   op: Optional[DiscreteOperator] = None) -> BoundReport:
    """Compare a trajectory against the proved bounds; never mutates it.

    C_w is the larger of the theory constant and the operator's discrete
    max |row sum|, so quadrature error cannot produce a false violation.
    """
    if len(traj) == 0:
        raise ValidationError('Cannot monitor an empty trajectory')

    values = traj.values
    c_w = constants.c_w if op is None else max(constants.c_w, op.max_abs_row_sum)
    u0 = traj.states[0].values
    bound = global_bound(float(np.max(np.abs(u0))), model.gamma, c_w)

    sup_series = np.max(np.abs(values), axis=1)
    min_series = np.min(values, axis=1)

    applicable = model.w.positive and bool(np.min(u0) >= 0.0)
    violations = int(np.count_nonzero(values < -POSITIVITY_TOLERANCE)) if applicable else 0

    l1_series = None
    l1_limit = None
    if op is not None:
        l1_series = np.array([l1_norm(op.quad, row) for row in values])
        l1_limit = l1_bound(l1_series[0], c_w, op.grid.measure, model.gamma)

    sup_observed = float(np.max(sup_series))
    report = BoundReport(
        sup_observed=sup_observed,
        bound_theoretical=bound,
        positivity_violations=violations,
        positivity_applicable=applicable,
        within_bound=sup_observed <= bound + BOUND_SLACK,
        c_w=c_w,
        times=traj.times,
        sup_series=sup_series,
        min_series=min_series,
        l1_series=l1_series,
        l1_bound=l1_limit,
    )
    if not report.within_bound:
        logging.warning(f'Global bound exceeded: sup|u| = {sup_observed:.6g} > {bound:.6g}')
    if violations:
        logging.warning(f'Positivity violated at {violations} node/time sample(s)')
    return report
