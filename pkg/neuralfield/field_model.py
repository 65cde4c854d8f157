"""
field_model.py - Kernels, firing rates, learning kernels and theory constants

Defines the ingredients of the plastic neural field

    u_t + u = ∫_Ω w(x,y) [1 + γ g(u(x,t) - u(y,t))] f(u(y,t)) dy

and every constant that appears in its well-posedness estimates:

    C_inf  sup |w(x,y)|
    C_w    sup_x ∫ |w(x,y)| dy
    K_w    L¹-Lipschitz constant of x -> w(x,·)
    L      Lipschitz constant of f
    K      Lipschitz constant of g

Analytic values are used whenever the kind admits a closed form; otherwise
the constants are estimated on the simulation grid.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import expit

from .errors import InterpolationNotSupportedError, ValidationError


# ============================================================================
# Constants
# ============================================================================

FIRING_KINDS = ('sigmoid', 'scaled-arctan', 'linear', 'clamped')
BOUNDED_FIRING_KINDS = ('sigmoid', 'scaled-arctan', 'clamped')
LEARNING_KINDS = ('gaussian',)
KERNEL_KINDS = ('exponential', 'mexican-hat', 'tabulated')
MODES = ('well-posed', 'gain-field')

# Sampling used for grid estimates of L and K
SLOPE_SAMPLE_HALF_WIDTH = 50.0
SLOPE_SAMPLE_COUNT = 200001

ON_GRID_TOLERANCE = 1e-12


def _as_output(values: np.ndarray):
    """Return a plain float for scalar input, the array otherwise."""
    if np.ndim(values) == 0:
        return float(values)
    return values


# ============================================================================
# Firing Rate
# ============================================================================

@dataclass(frozen=True)
class FiringRate:
    """Firing rate f.

    sigmoid:        f(s) = 1 / (1 + exp(-slope (s - threshold)))
    scaled-arctan:  f(s) = 1/2 + arctan(slope s) / pi
    linear:         f(s) = s              (gain-field mode only)
    clamped:        f(s) = clip(slope (s - threshold), 0, ceiling)
    """
    kind: str = 'sigmoid'
    slope: float = 1.0
    threshold: float = 0.0
    ceiling: float = 1.0

    def __post_init__(self):
        if self.kind == 'heaviside':
            raise ValidationError('heaviside firing rates are not supported: the flow is discontinuous')
        if self.kind not in FIRING_KINDS:
            raise ValidationError(f'Unknown firing kind: {self.kind} (expected one of {", ".join(FIRING_KINDS)})')
        if not math.isfinite(self.slope) or self.slope < 0:
            raise ValidationError(f'Firing slope must be finite and >= 0, got {self.slope}')
        if not math.isfinite(self.threshold):
            raise ValidationError(f'Firing threshold must be finite, got {self.threshold}')
        if self.kind == 'clamped' and not 0.0 <= self.ceiling <= 1.0:
            raise ValidationError(f'Clamped firing ceiling must lie in [0, 1], got {self.ceiling}')

    @property
    def bounded(self) -> bool:
        return self.kind in BOUNDED_FIRING_KINDS

    @property
    def lipschitz_L(self) -> float:
        """sup |f'| in closed form."""
        if self.kind == 'sigmoid':
            return self.slope / 4.0
        if self.kind == 'scaled-arctan':
            return self.slope / math.pi
        if self.kind == 'linear':
            return 1.0
        return self.slope if self.ceiling > 0.0 else 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == 'sigmoid':
            out = expit(self.slope * (s - self.threshold))
        elif self.kind == 'scaled-arctan':
            out = 0.5 + np.arctan(self.slope * s) / math.pi
        elif self.kind == 'linear':
            out = s.copy()
        else:
            out = np.clip(self.slope * (s - self.threshold), 0.0, self.ceiling)
        return _as_output(out)

    def to_dict(self) -> Dict:
        if self.kind == 'sigmoid':
            params = {'slope': self.slope, 'threshold': self.threshold}
        elif self.kind == 'scaled-arctan':
            params = {'scale': self.slope}
        elif self.kind == 'linear':
            params = {}
        else:
            params = {'slope': self.slope, 'threshold': self.threshold, 'ceiling': self.ceiling}
        return {'kind': self.kind, 'params': params}

    @classmethod
    def from_dict(cls, data: Dict) -> 'FiringRate':
        kind = data.get('kind', 'sigmoid')
        params = data.get('params', {}) or {}
        if kind == 'scaled-arctan':
            return cls(kind=kind, slope=float(params.get('scale', 1.0)))
        return cls(
            kind=kind,
            slope=float(params.get('slope', 1.0)),
            threshold=float(params.get('threshold', 0.0)),
            ceiling=float(params.get('ceiling', 1.0)),
        )


# ============================================================================
# Learning Kernel
# ============================================================================

@dataclass(frozen=True)
class LearningKernel:
    """Learning kernel g(δ) = exp(-δ²/width²); the unit gaussian for width 1."""
    kind: str = 'gaussian'
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in LEARNING_KINDS:
            raise ValidationError(f'Unknown learning kind: {self.kind}')
        if not math.isfinite(self.width) or self.width <= 0:
            raise ValidationError(f'Learning kernel width must be > 0, got {self.width}')

    @property
    def lipschitz_K(self) -> float:
        # max |g'| = 2|δ|/σ² e^{-δ²/σ²} attained at δ = σ/√2
        return math.sqrt(2.0 / math.e) / self.width

    def __call__(self, delta):
        delta = np.asarray(delta, dtype=float)
        return _as_output(np.exp(-np.square(delta / self.width)))

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'params': {'width': self.width}}

    @classmethod
    def from_dict(cls, data: Dict) -> 'LearningKernel':
        params = data.get('params', {}) or {}
        return cls(kind=data.get('kind', 'gaussian'), width=float(params.get('width', 1.0)))


# ============================================================================
# Synaptic Kernel
# ============================================================================

@dataclass(frozen=True)
class SynapticKernel:
    """Synaptic kernel w(x, y).

    exponential:  w = amplitude * exp(-decay |x - y|)
    mexican-hat:  w = amplitude * (1 - |x - y|/scale) * exp(-|x - y|/scale)
    tabulated:    w(x_i, x_j) = matrix[i, j] on the grid nodes only
    """
    kind: str = 'exponential'
    amplitude: float = 0.5
    decay: float = 1.0
    scale: float = 1.0
    matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    nodes: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(f'Unknown kernel kind: {self.kind} (expected one of {", ".join(KERNEL_KINDS)})')
        if not math.isfinite(self.amplitude):
            raise ValidationError(f'Kernel amplitude must be finite, got {self.amplitude}')
        if self.kind == 'exponential' and not (math.isfinite(self.decay) and self.decay > 0):
            raise ValidationError(f'Exponential kernel decay must be > 0, got {self.decay}')
        if self.kind == 'mexican-hat' and not (math.isfinite(self.scale) and self.scale > 0):
            raise ValidationError(f'Mexican-hat scale must be > 0, got {self.scale}')
        if self.kind == 'tabulated':
            if self.matrix is None:
                raise ValidationError('Tabulated kernel needs a matrix')
            matrix = np.asarray(self.matrix, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValidationError(f'Tabulated kernel matrix must be square, got shape {matrix.shape}')
            if not np.all(np.isfinite(matrix)):
                raise ValidationError('Tabulated kernel matrix has non-finite entries')
            object.__setattr__(self, 'matrix', matrix)

    @property
    def isotropic(self) -> bool:
        return self.kind != 'tabulated'

    @property
    def positive(self) -> bool:
        """True when w > 0 everywhere (purely excitatory network)."""
        if self.kind == 'exponential':
            return self.amplitude > 0
        if self.kind == 'tabulated':
            return bool(np.all(self.matrix > 0))
        return False

    def profile(self, distance):
        """w as a function of |x - y| for isotropic kinds."""
        r = np.abs(np.asarray(distance, dtype=float))
        if self.kind == 'exponential':
            return _as_output(self.amplitude * np.exp(-self.decay * r))
        if self.kind == 'mexican-hat':
            z = r / self.scale
            return _as_output(self.amplitude * (1.0 - z) * np.exp(-z))
        raise InterpolationNotSupportedError('Tabulated kernels have no distance profile')

    def bind_nodes(self, nodes: np.ndarray) -> 'SynapticKernel':
        """Tabulated kernel that knows the grid nodes its matrix refers to."""
        return SynapticKernel(kind=self.kind, amplitude=self.amplitude, decay=self.decay,
                              scale=self.scale, matrix=self.matrix, nodes=np.asarray(nodes, dtype=float))

    def _node_index(self, point: np.ndarray) -> int:
        if self.nodes is None:
            raise InterpolationNotSupportedError('Tabulated kernel is not bound to grid nodes')
        nodes = self.nodes.reshape(len(self.nodes), -1)
        distance = np.max(np.abs(nodes - point.reshape(1, -1)), axis=1)
        index = int(np.argmin(distance))
        if distance[index] > ON_GRID_TOLERANCE:
            raise InterpolationNotSupportedError(
                f'Tabulated kernel evaluated off-grid at {point.tolist()} (interpolation not supported)'
            )
        return index

    def to_dict(self) -> Dict:
        if self.kind == 'exponential':
            params = {'amplitude': self.amplitude, 'decay': self.decay}
        elif self.kind == 'mexican-hat':
            params = {'amplitude': self.amplitude, 'scale': self.scale}
        else:
            params = {'matrix': self.matrix.tolist()}
        return {'kind': self.kind, 'params': params}

    @classmethod
    def from_dict(cls, data: Dict) -> 'SynapticKernel':
        kind = data.get('kind', 'exponential')
        params = data.get('params', {}) or {}
        if kind == 'tabulated':
            return cls(kind=kind, matrix=np.asarray(params.get('matrix'), dtype=float))
        if kind == 'mexican-hat':
            return cls(kind=kind, amplitude=float(params.get('amplitude', 1.0)),
                       scale=float(params.get('scale', 1.0)))
        return cls(kind=kind, amplitude=float(params.get('amplitude', 0.5)),
                   decay=float(params.get('decay', 1.0)))


# ============================================================================
# Model Specification
# ============================================================================

@dataclass(frozen=True)
class ModelSpec:
    """Full problem definition: kernel, firing rate, learning kernel, γ, mode."""
    w: SynapticKernel = field(default_factory=SynapticKernel)
    f: FiringRate = field(default_factory=FiringRate)
    g: LearningKernel = field(default_factory=LearningKernel)
    gamma: float = 0.0
    mode: str = 'well-posed'

    def __post_init__(self):
        if not isinstance(self.gamma, (int, float)) or not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValidationError(f'gamma must be a finite real >= 0, got {self.gamma}')
        if self.mode not in MODES:
            raise ValidationError(f'Unknown mode: {self.mode} (expected one of {", ".join(MODES)})')
        if self.mode == 'well-posed' and not self.f.bounded:
            raise ValidationError(
                f'Firing kind {self.f.kind!r} is unbounded and is only allowed in gain-field mode'
            )

    def with_gamma(self, gamma: float) -> 'ModelSpec':
        return ModelSpec(w=self.w, f=self.f, g=self.g, gamma=float(gamma), mode=self.mode)

    def to_dict(self) -> Dict:
        return {
            'kernel': self.w.to_dict(),
            'firing': self.f.to_dict(),
            'learning': self.g.to_dict(),
            'gamma': self.gamma,
            'mode': self.mode,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelSpec':
        return cls(
            w=SynapticKernel.from_dict(data.get('kernel', {})),
            f=FiringRate.from_dict(data.get('firing', {})),
            g=LearningKernel.from_dict(data.get('learning', {})),
            gamma=float(data.get('gamma', 0.0)),
            mode=data.get('mode', 'well-posed'),
        )


# ============================================================================
# Evaluation
# ============================================================================

def eval_firing(f: FiringRate, s):
    return f(s)


def eval_learning(g: LearningKernel, delta):
    return g(delta)


def eval_kernel(w: SynapticKernel, x, y):
    """w(x, y) at two points (scalars in 1-D, coordinate pairs in 2-D)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if w.kind == 'tabulated':
        return float(w.matrix[w._node_index(x), w._node_index(y)])
    return float(w.profile(np.linalg.norm(x - y)))


# ============================================================================
# Theory Constants
# ============================================================================

CONSTANT_NAMES = ('c_inf', 'c_w', 'k_w', 'L', 'K')


@dataclass(frozen=True)
class TheoryConstants:
    c_inf: float
    c_w: float
    k_w: float
    L: float
    K: float
    method: str = 'analytic'
    sources: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in CONSTANT_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f'Theory constant {name} must be finite and >= 0, got {value}')

    def to_dict(self) -> Dict:
        return {
            'c_inf': self.c_inf, 'c_w': self.c_w, 'k_w': self.k_w,
            'L': self.L, 'K': self.K, 'method': self.method, 'sources': dict(self.sources),
        }


def analytic_constants(model: ModelSpec, grid=None) -> Dict[str, Optional[float]]:
    """Closed-form constants; None where the kind has no closed form.

    Without a grid the domain is the real line. On a 1-D grid the kernel
    integrals are taken over Ω (periodic grids integrate over one period).
    """
    w = model.w
    values: Dict[str, Optional[float]] = {
        'L': model.f.lipschitz_L,
        'K': model.g.lipschitz_K,
        'c_inf': abs(w.amplitude) if w.isotropic else None,
        'c_w': None,
        'k_w': None,
    }
    dimension = 1 if grid is None else grid.dimension
    if dimension != 1 or not w.isotropic:
        return values

    amp = abs(w.amplitude)
    if grid is None:
        if w.kind == 'exponential':
            values['c_w'] = 2.0 * amp / w.decay
            values['k_w'] = 2.0 * amp
        else:
            values['c_w'] = 4.0 * w.scale * amp / math.e
            values['k_w'] = amp * (2.0 + 4.0 * math.exp(-2.0))
    elif w.kind == 'exponential':
        # sup over x is attained at the centre of the interval
        a, b = grid.bounds[0]
        truncation = 1.0 - math.exp(-w.decay * (b - a) / 2.0)
        values['c_w'] = 2.0 * amp / w.decay * truncation
        values['k_w'] = 2.0 * amp * truncation
    return values


def _max_secant_slope(fn: Callable, center: float) -> float:
    s = np.linspace(center - SLOPE_SAMPLE_HALF_WIDTH, center + SLOPE_SAMPLE_HALF_WIDTH, SLOPE_SAMPLE_COUNT)
    values = np.asarray(fn(s), dtype=float)
    return float(np.max(np.abs(np.diff(values) / np.diff(s))))


def grid_constants(model: ModelSpec, grid, quad=None) -> Dict[str, float]:
    """Grid estimates of every constant (sampled suprema and quadrature sums)."""
    from .discretization import build_quadrature, kernel_matrix

    if quad is None:
        quad = build_quadrature(grid, 'trapezoid')
    raw = kernel_matrix(model.w, grid)
    weighted = np.abs(raw) * quad.weights[None, :]

    # K_w from difference quotients between neighbouring nodes along each axis
    k_w = 0.0
    by_axis = raw.reshape(tuple(grid.nodes_per_axis) + (grid.node_count,))
    for axis, h in enumerate(grid.spacing):
        diffs = np.abs(np.diff(by_axis, axis=axis))
        l1 = np.sum(diffs * quad.weights, axis=-1) / h
        k_w = max(k_w, float(np.max(l1)))

    threshold = model.f.threshold if model.f.kind in ('sigmoid', 'clamped') else 0.0
    return {
        'c_inf': float(np.max(np.abs(raw))),
        'c_w': float(np.max(np.sum(weighted, axis=1))),
        'k_w': k_w,
        'L': _max_secant_slope(model.f, threshold),
        'K': _max_secant_slope(model.g, 0.0),
    }


def compute_constants(model: ModelSpec, grid=None, quad=None, prefer_analytic: bool = True) -> TheoryConstants:
    """Constants of the well-posedness estimates.

    Analytic values take precedence when `prefer_analytic` is set; the rest are
    grid estimates. Without a grid every constant must have a closed form.
    """
    analytic = analytic_constants(model, grid)
    estimated = grid_constants(model, grid, quad) if grid is not None else {}
    # grid estimates are lower bounds of the true suprema
    for name, value in estimated.items():
        exact = analytic.get(name)
        if exact is not None and value > exact:
            logging.debug(f'Grid estimate of {name} ({value:.10g}) clamped to analytic {exact:.10g}')
            estimated[name] = exact

    values = {}
    sources = {}
    for name in CONSTANT_NAMES:
        if prefer_analytic and analytic.get(name) is not None:
            values[name] = analytic[name]
            sources[name] = 'analytic'
        elif name in estimated:
            values[name] = estimated[name]
            sources[name] = 'grid-estimated'
        elif analytic.get(name) is not None:
            values[name] = analytic[name]
            sources[name] = 'analytic'
        else:
            raise ValidationError(f'Constant {name} has no closed form for this model; a grid is required')

    method = 'analytic' if all(src == 'analytic' for src in sources.values()) else 'grid-estimated'
    return TheoryConstants(method=method, sources=sources, **values)


def contraction_factor(constants: TheoryConstants, gamma: float, rho: float) -> float:
    """q = ρ[1 + L C_w + γ(L + 2K) C_w]."""
    c = constants
    return rho * (1.0 + c.L * c.c_w + gamma * (c.L + 2.0 * c.K) * c.c_w)


def max_segment_length(constants: TheoryConstants, gamma: float, safety: float = 0.5) -> float:
    """Segment length ρ at which the contraction factor equals `safety`."""
    if not 0.0 < safety < 1.0:
        raise ValidationError(f'safety must lie in (0, 1), got {safety}')
    return safety / contraction_factor(constants, gamma, 1.0)


def plasticity_limit_factor(constants: TheoryConstants, gamma: float, rho: float) -> float:
    """ρ[1 + (L + γK) C_w], the contraction of the annulling-plasticity argument."""
    c = constants
    return rho * (1.0 + (c.L + gamma * c.K) * c.c_w)


def l1_contraction_factor(constants: TheoryConstants, gamma: float, rho: float, measure: float) -> float:
    """ρ[1 + C_w|Ω|(L + γ(L + 2K))] for the L¹(Ω) theory."""
    c = constants
    return rho * (1.0 + c.c_w * measure * (c.L + gamma * (c.L + 2.0 * c.K)))


def global_bound(u0_sup: float, gamma: float, c_w: float) -> float:
    """max{‖u0‖∞, (1+γ) C_w}."""
    return max(abs(u0_sup), abs((1.0 + gamma) * c_w))


def dependence_constant(q: float) -> float:
    """C = 1/(1 - q) of the continuous-dependence estimate."""
    if q >= 1.0:
        raise ValidationError(f'dependence constant needs q < 1, got {q}')
    return 1.0 / (1.0 - q)


def l1_bound(u0_l1: float, c_w: float, measure: float, gamma: float = 0.0) -> float:
    """‖u0‖_{L¹} + (1+γ) C_w |Ω|; the plasticity factor enters through ‖Ju‖_{L¹}."""
    return u0_l1 + (1.0 + gamma) * c_w * measure


def check_lipschitz(fn: Callable, constant: float, n_pairs: int = 10000, seed: int = 0,
                    spread: float = 10.0) -> float:
    """Worst violation of |fn(s) - fn(t)| <= constant |s - t| over seeded pairs.

    Returns max(|Δfn| - constant |Δs|), which is <= 0 when the bound holds.
    Half of the pairs are close together to probe the steepest slope.
    """
    rng = np.random.default_rng(seed)
    s = rng.uniform(-spread, spread, n_pairs)
    far = rng.uniform(-spread, spread, n_pairs)
    near = s + rng.normal(0.0, 1e-3, n_pairs)
    t = np.where(np.arange(n_pairs) % 2 == 0, far, near)
    lhs = np.abs(np.asarray(fn(s)) - np.asarray(fn(t)))
    return float(np.max(lhs - constant * np.abs(s - t)))
