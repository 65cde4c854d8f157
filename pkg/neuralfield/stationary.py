"""
stationary.py - Stationary states u = J(u) and the equicontinuity probe

Two routes to a stationary state:

    damped-fp  u <- (1 - α) u + α J(u) until |u - J(u)|_inf < tol
    flow       exp-Euler integration until |F(u)|_inf < settle_tol, sampling
               the state at the geometric times t_n = 2^n dt

Multiple stationary states may exist; each call converges to the one in the
basin of its starting point.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .discretization import DiscreteOperator, FieldState, Grid, apply_J_values
from .errors import DimensionMismatchError, MaxIterExceededError, NotSettledError, ValidationError
from .field_model import ModelSpec, TheoryConstants
from .solver import Trajectory


STATIONARY_METHODS = ('damped-fp', 'flow')
EQUICONTINUITY_OFFSETS = (1, 2, 4, 8)


# ============================================================================
# Data Structures
# ============================================================================

@dataclass
class StationaryResult:
    u_inf: FieldState
    residual_sup: float
    iterations: int
    method: str
    converged: bool
    samples: List[FieldState] = field(default_factory=list, repr=False)
    t_settle: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'converged': self.converged,
            'residual_sup': self.residual_sup,
            'iterations': self.iterations,
            't_settle': self.t_settle,
            'sample_times': [s.t for s in self.samples],
        }


@dataclass
class ModulusTable:
    """sup over time of ω(h) = max_i |u_{i+k} - u_i| for each offset k."""
    offsets: List[int]
    spacings: List[float]
    moduli: List[float]
    monotone: bool
    gamma_cw: Optional[float] = None

    def rows(self) -> List[Dict]:
        return [{'k': k, 'h': h, 'modulus': m} for k, h, m in zip(self.offsets, self.spacings, self.moduli)]


# ============================================================================
# Damped Fixed Point
# ============================================================================

def _warn_regime(model: ModelSpec, op: DiscreteOperator, constants: Optional[TheoryConstants]) -> float:
    c_w = constants.c_w if constants is not None else op.max_abs_row_sum
    gamma_cw = model.gamma * c_w
    if gamma_cw >= 1.0:
        logging.warning(f'gamma*C_w = {gamma_cw:.4g} >= 1: outside the small-plasticity regime, '
                        f'convergence to a stationary state is not guaranteed')
    return gamma_cw


def find_stationary_fp(model: ModelSpec, op: DiscreteOperator, u_init: FieldState, damping: float = 0.5,
                       tol: float = 1e-10, max_iter: int = 10000,
                       constants: Optional[TheoryConstants] = None, threads: int = 1) -> StationaryResult:
    """Damped fixed-point iteration u <- (1 - α) u + α J(u).

    `iterations` counts applied updates. The residual is evaluated on the
    returned state itself.
    """
    if not 0.0 < damping <= 1.0:
        raise ValidationError(f'damping must lie in (0, 1], got {damping}')
    if not tol > 0:
        raise ValidationError(f'tol must be > 0, got {tol}')
    _warn_regime(model, op, constants)

    u = np.array(u_init.values, dtype=float)
    best_u, best_residual = u, math.inf
    for iteration in range(int(max_iter) + 1):
        Ju = apply_J_values(model, op, u, threads)
        residual = float(np.max(np.abs(u - Ju)))
        if residual < best_residual:
            best_u, best_residual = u, residual
        if residual < tol:
            logging.info(f'Damped fixed point converged: {iteration} iteration(s), residual {residual:.3e}')
            return StationaryResult(u_inf=FieldState(values=u, t=math.inf), residual_sup=residual,
                                    iterations=iteration, method='damped-fp', converged=True)
        if iteration == max_iter:
            break
        u = (1.0 - damping) * u + damping * Ju

    result = StationaryResult(u_inf=FieldState(values=best_u, t=math.inf), residual_sup=best_residual,
                              iterations=int(max_iter), method='damped-fp', converged=False)
    raise MaxIterExceededError(
        f'Damped fixed point did not reach tol={tol:g} in {max_iter} iterations '
        f'(best residual {best_residual:.3e})',
        result=result,
    )


# ============================================================================
# Long-Time Flow
# ============================================================================

def stationary_via_flow(model: ModelSpec, op: DiscreteOperator, u0: FieldState, t_max: float = 500.0,
                        settle_tol: float = 1e-10, dt: float = 0.5,
                        constants: Optional[TheoryConstants] = None, threads: int = 1) -> StationaryResult:
    """Integrate with exp-Euler until |F(u)|_inf < settle_tol or t_max is reached."""
    if not dt > 0 or not t_max > 0:
        raise ValidationError(f'dt and t_max must be > 0, got dt={dt}, t_max={t_max}')
    _warn_regime(model, op, constants)

    decay = math.exp(-dt)
    gain = -math.expm1(-dt)
    max_steps = max(1, math.ceil(t_max / dt - 1e-9))

    u = np.array(u0.values, dtype=float)
    samples: List[FieldState] = []
    next_sample = 1
    for step in range(max_steps + 1):
        Ju = apply_J_values(model, op, u, threads)
        residual = float(np.max(np.abs(Ju - u)))
        t = u0.t + step * dt
        if step == next_sample:
            samples.append(FieldState(values=u.copy(), t=t))
            next_sample *= 2
        if residual < settle_tol:
            logging.info(f'Flow settled at t={t:.6g} after {step} step(s), residual {residual:.3e}')
            return StationaryResult(u_inf=FieldState(values=u, t=math.inf), residual_sup=residual,
                                    iterations=step, method='flow', converged=True,
                                    samples=samples, t_settle=t)
        if step == max_steps:
            break
        # exp-Euler step reusing J(u)
        u = decay * u + gain * Ju

    result = StationaryResult(u_inf=FieldState(values=u, t=math.inf), residual_sup=residual,
                              iterations=max_steps, method='flow', converged=False, samples=samples)
    raise NotSettledError(f'Flow did not settle by t_max={t_max:g} (residual {residual:.3e})', result=result)


# ============================================================================
# Equicontinuity
# ============================================================================

def equicontinuity_probe(traj: Trajectory, grid: Grid, offsets: Sequence[int] = EQUICONTINUITY_OFFSETS,
                         gamma_cw: Optional[float] = None) -> ModulusTable:
    """Moduli of continuity of the trajectory, reported not asserted."""
    if grid.dimension != 1:
        raise DimensionMismatchError('The equicontinuity probe needs a 1-D grid')
    values = traj.values
    if values.shape[1] != grid.node_count:
        raise DimensionMismatchError(f'Trajectory has {values.shape[1]} nodes but the grid has {grid.node_count}')

    moduli = []
    for k in offsets:
        if k >= grid.node_count:
            raise ValidationError(f'Offset {k} exceeds the grid size {grid.node_count}')
        moduli.append(float(np.max(np.abs(values[:, k:] - values[:, :-k]))))
    monotone = all(moduli[j] <= moduli[j + 1] for j in range(len(moduli) - 1))

    table = ModulusTable(offsets=list(offsets), spacings=[k * grid.h for k in offsets],
                         moduli=moduli, monotone=monotone, gamma_cw=gamma_cw)
    logging.debug(f'Equicontinuity moduli {dict(zip(table.offsets, table.moduli))}, monotone={monotone}')
    return table
