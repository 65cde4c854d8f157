"""
discretization.py - Grids, quadrature rules and the discrete Hammerstein operators

Every integral over Ω becomes a weighted sum over grid nodes:

    (Ju)_i = Σ_j W_ij [1 + γ g(u_i - u_j)] f(u_j),    W_ij = w(x_i, x_j) q_j
    (Fu)_i = -u_i + (Ju)_i

Row sums are accumulated in ascending j with numpy.cumsum (sequential, not
pairwise) so the result is the same for every block size and thread count.
2-D grids are tensor products flattened in lexicographic ('ij') order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatchError, NumericalBlowupError, ValidationError
from .field_model import ModelSpec, SynapticKernel


# ============================================================================
# Constants
# ============================================================================

BOUNDARIES = ('compact', 'periodic')
QUADRATURE_RULES = ('trapezoid', 'simpson')
INITIAL_KINDS = ('constant', 'gaussian-bump', 'step', 'cosine', 'random')

# Rows evaluated per block in apply_J
ROW_BLOCK = 256


# ============================================================================
# Grid / Quadrature / State
# ============================================================================

@dataclass(frozen=True)
class Grid:
    """Uniform grid on a box Ω ⊂ R^m, m ∈ {1, 2}."""
    dimension: int = 1
    bounds: Tuple[Tuple[float, float], ...] = ((-10.0, 10.0),)
    nodes_per_axis: Tuple[int, ...] = (201,)
    boundary: str = 'compact'

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        counts = tuple(int(n) for n in self.nodes_per_axis)
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'nodes_per_axis', counts)

        if self.dimension not in (1, 2):
            raise ValidationError(f'Grid dimension must be 1 or 2, got {self.dimension}')
        if len(bounds) != self.dimension or len(counts) != self.dimension:
            raise ValidationError(
                f'Grid of dimension {self.dimension} needs {self.dimension} bounds and node counts, '
                f'got {len(bounds)} and {len(counts)}'
            )
        for (a, b), n in zip(bounds, counts):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValidationError(f'Grid bounds must satisfy a < b, got [{a}, {b}]')
            if n < 3:
                raise ValidationError(f'Grid needs at least 3 nodes per axis, got {n}')
        if self.boundary not in BOUNDARIES:
            raise ValidationError(f'Unknown boundary: {self.boundary} (expected one of {", ".join(BOUNDARIES)})')

    @property
    def periodic(self) -> bool:
        return self.boundary == 'periodic'

    @property
    def spacing(self) -> Tuple[float, ...]:
        if self.periodic:
            return tuple((b - a) / n for (a, b), n in zip(self.bounds, self.nodes_per_axis))
        return tuple((b - a) / (n - 1) for (a, b), n in zip(self.bounds, self.nodes_per_axis))

    @property
    def h(self) -> float:
        """Spacing of the first axis."""
        return self.spacing[0]

    @property
    def axes(self) -> List[np.ndarray]:
        return [a + h * np.arange(n) for (a, _), h, n in zip(self.bounds, self.spacing, self.nodes_per_axis)]

    @property
    def x(self) -> np.ndarray:
        return self.axes[0]

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (node_count, dimension), lexicographic order."""
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.nodes_per_axis))

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.bounds]))

    def to_dict(self) -> Dict:
        return {
            'dimension': self.dimension,
            'bounds': [list(b) for b in self.bounds],
            'nodes': list(self.nodes_per_axis),
            'boundary': self.boundary,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Grid':
        dimension = int(data.get('dimension', 1))
        bounds = data.get('bounds', [[-10.0, 10.0]] * dimension)
        nodes = data.get('nodes', [201] * dimension)
        if isinstance(nodes, int):
            nodes = [nodes] * dimension
        return cls(dimension=dimension, bounds=tuple(tuple(b) for b in bounds),
                   nodes_per_axis=tuple(nodes), boundary=data.get('boundary', 'compact'))


@dataclass(frozen=True)
class Quadrature:
    rule: str
    weights: np.ndarray = field(compare=False, repr=False)


@dataclass
class FieldState:
    """u sampled on the grid nodes at time t (t = inf marks a stationary state).

    Values must be finite; `diagnostic` states (blow-up snapshots) skip that check.
    """
    values: np.ndarray
    t: float = 0.0
    diagnostic: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.t < 0:
            raise ValidationError(f'FieldState time must be >= 0, got {self.t}')
        if not self.diagnostic and not self.finite:
            bad = int(np.count_nonzero(~np.isfinite(self.values)))
            raise NumericalBlowupError(f'Non-finite state at t={self.t:.6g} ({bad} node(s))',
                                       snapshot=FieldState(values=self.values.copy(), t=self.t, diagnostic=True))

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class DiscreteOperator:
    """Precomputed W_ij = w(x_i, x_j) q_j with its grid and quadrature."""
    matrix: np.ndarray = field(compare=False, repr=False)
    grid: Grid
    quad: Quadrature = field(compare=False)
    max_abs_row_sum: float = 0.0

    def scaled_columns(self, column_factor: np.ndarray) -> 'DiscreteOperator':
        """Operator with W_ij c_j, e.g. a kernel modulated by a presynaptic gain."""
        column_factor = np.asarray(column_factor, dtype=float)
        if column_factor.shape != (self.grid.node_count,):
            raise DimensionMismatchError(
                f'Column factor has shape {column_factor.shape}, expected ({self.grid.node_count},)'
            )
        matrix = self.matrix * column_factor[None, :]
        return DiscreteOperator(matrix=matrix, grid=self.grid, quad=self.quad,
                                max_abs_row_sum=float(np.max(np.sum(np.abs(matrix), axis=1))))


# ============================================================================
# Quadrature
# ============================================================================

def _axis_weights(rule: str, n: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        if rule != 'trapezoid':
            raise ValidationError('Periodic grids support only the trapezoid rule')
        return np.full(n, h)
    if rule == 'trapezoid':
        weights = np.full(n, h)
        weights[0] = weights[-1] = h / 2.0
        return weights
    if n % 2 == 0:
        raise ValidationError(f'Simpson rule needs an odd node count per axis, got {n}')
    weights = np.full(n, 2.0 * h / 3.0)
    weights[1::2] = 4.0 * h / 3.0
    weights[0] = weights[-1] = h / 3.0
    return weights


def build_quadrature(grid: Grid, rule: str = 'trapezoid') -> Quadrature:
    """Composite rule, tensor product over the axes in node order."""
    if rule not in QUADRATURE_RULES:
        raise ValidationError(f'Unknown quadrature rule: {rule} (expected one of {", ".join(QUADRATURE_RULES)})')
    weights = np.ones(1)
    for n, h in zip(grid.nodes_per_axis, grid.spacing):
        weights = np.outer(weights, _axis_weights(rule, n, h, grid.periodic)).ravel()
    return Quadrature(rule=rule, weights=weights)


def l1_norm(quad: Quadrature, values: np.ndarray) -> float:
    return float(np.sum(quad.weights * np.abs(values)))


# ============================================================================
# Operator Assembly
# ============================================================================

def distance_matrix(grid: Grid) -> np.ndarray:
    """|x_i - x_j| for all node pairs; minimal image on periodic grids."""
    nodes = grid.nodes
    squared = np.zeros((grid.node_count, grid.node_count))
    for axis, (a, b) in enumerate(grid.bounds):
        diff = np.abs(nodes[:, axis][:, None] - nodes[:, axis][None, :])
        if grid.periodic:
            diff = np.minimum(diff, (b - a) - diff)
        squared += diff * diff
    return np.sqrt(squared)


def kernel_matrix(w: SynapticKernel, grid: Grid) -> np.ndarray:
    """w(x_i, x_j) on every node pair."""
    if w.kind == 'tabulated':
        if w.matrix.shape != (grid.node_count, grid.node_count):
            raise DimensionMismatchError(
                f'Tabulated kernel is {w.matrix.shape[0]}x{w.matrix.shape[1]} '
                f'but the grid has {grid.node_count} nodes'
            )
        return np.array(w.matrix, dtype=float)
    return np.asarray(w.profile(distance_matrix(grid)), dtype=float)


def build_operator(w: SynapticKernel, grid: Grid, quad: Quadrature) -> DiscreteOperator:
    if quad.weights.shape != (grid.node_count,):
        raise DimensionMismatchError(
            f'Quadrature has {quad.weights.size} weights but the grid has {grid.node_count} nodes'
        )
    matrix = kernel_matrix(w, grid) * quad.weights[None, :]
    if not np.all(np.isfinite(matrix)):
        raise ValidationError('Kernel matrix has non-finite entries')
    max_abs_row_sum = float(np.max(np.sum(np.abs(matrix), axis=1)))
    logging.debug(f'Built {w.kind} operator: {grid.node_count} nodes, {quad.rule} rule, '
                  f'max |row sum| = {max_abs_row_sum:.6g}')
    return DiscreteOperator(matrix=matrix, grid=grid, quad=quad, max_abs_row_sum=max_abs_row_sum)


# ============================================================================
# Operator Application
# ============================================================================

def _rows_J(model: ModelSpec, matrix: np.ndarray, u: np.ndarray, fu: np.ndarray,
            start: int, stop: int) -> np.ndarray:
    contrib = matrix[start:stop]
    if model.gamma != 0.0:
        factor = 1.0 + model.gamma * np.asarray(model.g(u[start:stop, None] - u[None, :]))
        contrib = contrib * factor
    contrib = contrib * fu[None, :]
    return np.cumsum(contrib, axis=1)[:, -1]


def apply_J_values(model: ModelSpec, op: DiscreteOperator, u: np.ndarray, threads: int = 1) -> np.ndarray:
    """apply_J on a raw value vector."""
    u = np.asarray(u, dtype=float)
    n = op.grid.node_count
    if u.shape != (n,):
        raise DimensionMismatchError(f'State has {u.size} values but the grid has {n} nodes')
    fu = np.asarray(model.f(u), dtype=float)
    blocks = [(start, min(start + ROW_BLOCK, n)) for start in range(0, n, ROW_BLOCK)]
    out = np.empty(n)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = executor.map(lambda blk: _rows_J(model, op.matrix, u, fu, *blk), blocks)
            for (start, stop), rows in zip(blocks, results):
                out[start:stop] = rows
    else:
        for start, stop in blocks:
            out[start:stop] = _rows_J(model, op.matrix, u, fu, start, stop)
    return out


def apply_J(model: ModelSpec, op: DiscreteOperator, state: FieldState, threads: int = 1) -> np.ndarray:
    """(Ju)_i = Σ_j W_ij [1 + γ g(u_i - u_j)] f(u_j)."""
    return apply_J_values(model, op, state.values, threads)


def apply_F_values(model: ModelSpec, op: DiscreteOperator, u: np.ndarray, threads: int = 1) -> np.ndarray:
    return -np.asarray(u, dtype=float) + apply_J_values(model, op, u, threads)


def apply_F(model: ModelSpec, op: DiscreteOperator, state: FieldState, threads: int = 1) -> np.ndarray:
    """(Fu) = -u + Ju."""
    return apply_F_values(model, op, state.values, threads)


# ============================================================================
# Initial States
# ============================================================================

def make_initial_state(grid: Grid, kind: str = 'gaussian-bump', params: Optional[Dict] = None,
                       seed: Optional[int] = None) -> FieldState:
    """Initial datum u0 on the grid.

    constant       u0 = value
    gaussian-bump  u0 = amplitude exp(-|x - center|² / width²)
    step           u0 = value on the lower half of the first axis, 0 elsewhere
    cosine         u0 = offset + amplitude cos(2π modes (x_1 - a) / (b - a))
    random         u0 uniform in [low, high], seeded
    """
    params = params or {}
    nodes = grid.nodes
    first = nodes[:, 0]
    a, b = grid.bounds[0]

    if kind == 'constant':
        values = np.full(grid.node_count, float(params.get('value', 0.0)))
    elif kind == 'gaussian-bump':
        center = params.get('center')
        if center is None:
            center = [0.5 * (lo + hi) for lo, hi in grid.bounds]
        center = np.asarray(center, dtype=float)
        center = np.broadcast_to(center, (grid.dimension,))
        width = float(params.get('width', 1.0))
        r2 = np.sum((nodes - center[None, :]) ** 2, axis=1)
        values = float(params.get('amplitude', 1.0)) * np.exp(-r2 / width ** 2)
    elif kind == 'step':
        values = np.where(first < 0.5 * (a + b), float(params.get('value', 1.0)), 0.0)
    elif kind == 'cosine':
        modes = float(params.get('modes', 1.0))
        values = (float(params.get('offset', 0.0))
                  + float(params.get('amplitude', 1.0)) * np.cos(2.0 * np.pi * modes * (first - a) / (b - a)))
    elif kind == 'random':
        rng = np.random.default_rng(seed)
        values = rng.uniform(float(params.get('low', 0.0)), float(params.get('high', 1.0)), grid.node_count)
    else:
        raise ValidationError(f'Unknown initial state kind: {kind} (expected one of {", ".join(INITIAL_KINDS)})')
    return FieldState(values=values, t=0.0)
