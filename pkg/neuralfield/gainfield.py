"""
gainfield.py - Learned kernel, Mercer spectrum, pre-synaptic gain field and Schrödinger cross-check

Pipeline from a stationary state u_inf to a gain field and back to a
time-independent Schrödinger problem:

    1. G_ij = 1 + s γ g(u_inf(x_i) - u_inf(x_j))              (s = +1 by default)
    2. Mercer: symmetric eigenproblem of D^½ G D^½, φ = V / √q, so that
       G = Σ σ_i φ_i φ_iᵀ with quadrature-orthonormal φ_i
    3. φ_pre(y) = K_pre Σ σ_i φ_i(y)²
    4. gain-field dynamics: u' + u = ∫ w(x,y) φ_pre(y) f(u(y)) dy
    5. Schrödinger: -ψ'' + V ψ = E ψ on a square well, with the well depth V0
       chosen so that E = k² - λ² when k² = V0; then ψ = G_λ * (P ψ) with
       G_λ(x) = e^{-λ|x|} / (2λ) and P = k² - V.

Usage:
    from neuralfield.gainfield import schrodinger_cross_check, PotentialSpec
    report = schrodinger_cross_check(1.0, PotentialSpec('square-well', half_width=1.0), grid)
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.optimize import bisect, brentq

from .discretization import DiscreteOperator, FieldState, Grid, Quadrature, build_quadrature
from .errors import (BoxTooSmallError, DimensionMismatchError, EigenResidualError, NoBoundStateError,
                     NotPSDError, NumericalError, ValidationError)
from .field_model import ModelSpec, TheoryConstants, compute_constants
from .solver import SolverConfig, Trajectory, solve_global


# ============================================================================
# Constants
# ============================================================================

PSD_TOLERANCE = 1e-8
EIGEN_RESIDUAL_TOLERANCE = 1e-8
BOX_EDGE_TOLERANCE = 1e-6
POTENTIAL_SHAPES = ('square-well', 'custom-tabulated')

# Prefactor of e^{-λ|x|}; only 'green' is the Green's function of λ² - d²/dx²
GREEN_NORMALIZATIONS = {
    'green': lambda lam: 1.0 / (2.0 * lam),
    'weight': lambda lam: 0.5,
    'inverse': lambda lam: 1.0 / lam,
}


# ============================================================================
# Data Structures
# ============================================================================

@dataclass(frozen=True)
class LearnedKernel:
    matrix: np.ndarray = field(repr=False)
    grid: Grid
    gamma: float
    sign: int = 1
    u_inf: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs on the grid; `vectors[:, i]` belongs to `values[i]`."""
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    ordering: str = 'descending'

    def gram(self) -> np.ndarray:
        return self.vectors.T @ (self.weights[:, None] * self.vectors)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class GainField:
    phi_pre: np.ndarray = field(repr=False)
    K_pre: float = 1.0
    rank: Optional[int] = None


@dataclass(frozen=True)
class PotentialSpec:
    """Potential V for the Schrödinger problem.

    square-well:       V = 0 on |x| < half_width, height elsewhere
    custom-tabulated:  V given node by node (values on the full grid)
    """
    shape: str = 'square-well'
    half_width: float = 1.0
    height: float = 0.0
    k_squared: Optional[float] = None
    lambda_: Optional[float] = None
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.shape not in POTENTIAL_SHAPES:
            raise ValidationError(f'Unknown potential shape: {self.shape}')
        if self.shape == 'square-well':
            if not self.half_width > 0:
                raise ValidationError(f'Square well half_width must be > 0, got {self.half_width}')
            if not (math.isfinite(self.height) and self.height >= 0):
                raise ValidationError(f'Square well height must be >= 0, got {self.height}')
        elif self.values is None:
            raise ValidationError('custom-tabulated potential needs values')
        if self.lambda_ is not None and not self.lambda_ > 0:
            raise ValidationError(f'lambda must be > 0, got {self.lambda_}')

    @property
    def energy(self) -> Optional[float]:
        """E = k² - λ² when both are set."""
        if self.k_squared is None or self.lambda_ is None:
            return None
        return self.k_squared - self.lambda_ ** 2

    def on_grid(self, grid: Grid) -> np.ndarray:
        """V at the nodes; the square well is averaged over each node's cell."""
        x = grid.x
        if self.shape == 'custom-tabulated':
            values = np.asarray(self.values, dtype=float)
            if values.shape != x.shape:
                raise DimensionMismatchError(f'Potential has {values.size} values but the grid has {x.size} nodes')
            return values
        h = grid.h
        inside = np.clip(np.minimum(x + h / 2, self.half_width) - np.maximum(x - h / 2, -self.half_width), 0.0, h)
        return self.height * (1.0 - inside / h)

    def source_term(self, grid: Grid) -> np.ndarray:
        """P = k² - V."""
        if self.k_squared is None:
            raise ValidationError('source term needs k_squared')
        return self.k_squared - self.on_grid(grid)


@dataclass
class CrossCheckReport:
    lambda_: float
    v0: float
    k2: float
    energy: float
    residual_l2: float
    rayleigh_quotient: float
    consistency_gap: float
    bracket: Tuple[float, float]
    nodes: int

    def to_dict(self) -> Dict:
        return {
            'lambda': self.lambda_,
            'V0': self.v0,
            'k2': self.k2,
            'E': self.energy,
            'residual_l2': self.residual_l2,
            'rayleigh_quotient': self.rayleigh_quotient,
            'consistency_gap': self.consistency_gap,
            'bracket': list(self.bracket),
            'nodes': self.nodes,
        }


@dataclass
class GainComparison:
    """Plastic run vs gain-field run from the same u0 (exploratory)."""
    sup_difference: float
    final_fraction_plastic_above: float
    t_end: float
    plastic: Trajectory = field(repr=False)
    gain: Trajectory = field(repr=False)

    def to_dict(self) -> Dict:
        return {
            'sup_difference': self.sup_difference,
            'final_fraction_plastic_above': self.final_fraction_plastic_above,
            't_end': self.t_end,
            'asserted': False,
        }


# ============================================================================
# Learned Kernel / Mercer
# ============================================================================

def build_learned_kernel(u_inf: FieldState, model: ModelSpec, grid: Grid, sign: int = 1) -> LearnedKernel:
    """G_ij = 1 + sign γ g(u_i - u_j)."""
    if sign not in (1, -1):
        raise ValidationError(f'Learned kernel sign must be +1 or -1, got {sign}')
    u = u_inf.values
    if u.shape != (grid.node_count,):
        raise DimensionMismatchError(f'u_inf has {u.size} values but the grid has {grid.node_count} nodes')
    matrix = 1.0 + sign * model.gamma * np.asarray(model.g(u[:, None] - u[None, :]))
    if not np.array_equal(matrix, matrix.T):
        raise NumericalError('Learned kernel is not symmetric')
    return LearnedKernel(matrix=matrix, grid=grid, gamma=model.gamma, sign=sign, u_inf=u.copy())


def mercer_decompose(G: LearnedKernel, quad: Quadrature) -> EigenSystem:
    """Eigenpairs of the integral operator with kernel G, quadrature-orthonormal.

    Solves the symmetric problem D^½ G D^½ v = σ v and returns φ = D^{-½} v.
    Each φ_i is signed so that Σ q φ_i >= 0.
    """
    weights = quad.weights
    if G.matrix.shape != (weights.size, weights.size):
        raise DimensionMismatchError(f'Kernel is {G.matrix.shape} but the quadrature has {weights.size} weights')
    root = np.sqrt(weights)
    sigma, V = eigh(root[:, None] * G.matrix * root[None, :])
    sigma, V = sigma[::-1], V[:, ::-1]

    top = float(sigma[0])
    if float(sigma[-1]) < -PSD_TOLERANCE * top:
        raise NotPSDError(float(sigma[-1]), top)

    phi = V / root[:, None]
    mass = weights @ phi
    flip = np.where(mass < 0, -1.0, 1.0)
    phi = phi * flip[None, :]

    residual = (G.matrix * weights[None, :]) @ phi - phi * sigma[None, :]
    allowed = EIGEN_RESIDUAL_TOLERANCE * max(abs(top), 1e-300) * np.linalg.norm(phi, axis=0)
    worst = np.linalg.norm(residual, axis=0) - allowed
    if np.any(worst > 0):
        raise EigenResidualError(f'Eigen-residual contract violated for {int(np.sum(worst > 0))} pair(s)')

    logging.debug(f'Mercer: {len(sigma)} eigenvalues, sigma_1={top:.6g}, min={float(sigma[-1]):.3e}')
    return EigenSystem(values=sigma, vectors=phi, weights=weights, ordering='descending')


def reconstruct(eig: EigenSystem, rank: Optional[int] = None) -> np.ndarray:
    """Σ_{i<rank} σ_i φ_i φ_iᵀ."""
    rank = len(eig) if rank is None else rank
    phi = eig.vectors[:, :rank]
    return (phi * eig.values[None, :rank]) @ phi.T


def reconstruction_error(eig: EigenSystem, G: LearnedKernel, rank: Optional[int] = None) -> float:
    """max |G - G_rank|."""
    return float(np.max(np.abs(G.matrix - reconstruct(eig, rank))))


def truncation_errors(eig: EigenSystem) -> np.ndarray:
    """Quadrature-weighted Hilbert-Schmidt error of the rank-r truncation, r = 0..n.

    Equals sqrt(Σ_{i>r} σ_i²) and is nonincreasing in r.
    """
    tail = np.cumsum((eig.values ** 2)[::-1])[::-1]
    return np.sqrt(np.append(tail, 0.0))


def presynaptic_gain(eig: EigenSystem, K_pre: float = 1.0, rank: Optional[int] = None) -> GainField:
    """φ_pre(y) = K_pre Σ σ_i φ_i(y)²; round-off negative eigenvalues count as 0."""
    if not K_pre > 0:
        raise ValidationError(f'K_pre must be > 0, got {K_pre}')
    rank = len(eig) if rank is None else rank
    sigma = np.clip(eig.values[:rank], 0.0, None)
    phi_pre = K_pre * (eig.vectors[:, :rank] ** 2) @ sigma
    return GainField(phi_pre=phi_pre, K_pre=K_pre, rank=rank)


# ============================================================================
# Gain-Field Dynamics
# ============================================================================

def _gain_constants(constants: TheoryConstants, phi_pre: np.ndarray) -> TheoryConstants:
    scale = float(np.max(np.abs(phi_pre))) if phi_pre.size else 0.0
    return replace(constants, c_inf=constants.c_inf * scale, c_w=constants.c_w * scale,
                   k_w=constants.k_w * scale)


def simulate_gainfield(model: ModelSpec, op: DiscreteOperator, gain: GainField, u0: FieldState,
                       cfg: SolverConfig, constants: Optional[TheoryConstants] = None,
                       threads: int = 1) -> Trajectory:
    """Run u' + u = ∫ w(x,y) φ_pre(y) f(u(y)) dy with plasticity switched off."""
    plain = model.with_gamma(0.0)
    effective = op.scaled_columns(gain.phi_pre)
    if constants is None:
        constants = compute_constants(plain, op.grid, op.quad)
    return solve_global(plain, effective, u0, cfg, _gain_constants(constants, gain.phi_pre), threads)


def compare_gain_and_plastic(model: ModelSpec, op: DiscreteOperator, gain: GainField, u0: FieldState,
                             cfg: SolverConfig, threads: int = 1) -> GainComparison:
    """Plastic run against the gain-field run; reported, never asserted."""
    plastic = solve_global(model, op, u0, cfg, threads=threads)
    gained = simulate_gainfield(model, op, gain, u0, cfg, threads=threads)
    diff = plastic.values - gained.values
    above = float(np.mean(plastic.final.values > gained.final.values))
    comparison = GainComparison(sup_difference=float(np.max(np.abs(diff))), final_fraction_plastic_above=above,
                                t_end=float(plastic.final.t), plastic=plastic, gain=gained)
    logging.warning(f'Exploratory comparison (not asserted): sup|u_plastic - u_gain| = '
                    f'{comparison.sup_difference:.6g}, plastic above gain at {100.0 * above:.1f}% of nodes')
    return comparison


# ============================================================================
# Green's Function
# ============================================================================

def green_kernel(x: np.ndarray, lam: float, normalization: str = 'green') -> np.ndarray:
    if not lam > 0:
        raise ValidationError(f'lambda must be > 0, got {lam}')
    if normalization not in GREEN_NORMALIZATIONS:
        raise ValidationError(f'Unknown kernel normalization: {normalization}')
    return GREEN_NORMALIZATIONS[normalization](lam) * np.exp(-lam * np.abs(x))


def _convolve(lam: float, grid: Grid, values: np.ndarray, normalization: str = 'green') -> np.ndarray:
    x = grid.x
    weights = build_quadrature(grid, 'trapezoid').weights
    return (green_kernel(x[:, None] - x[None, :], lam, normalization) * weights[None, :]) @ values


def greens_identity_check(lam: float, grid: Grid,
                          h: Union[None, Callable, np.ndarray] = None) -> float:
    """max |(λ² - D²)(G_λ * h) - h| over interior nodes.

    h defaults to the gaussian bump e^{-x²}.
    """
    if grid.dimension != 1:
        raise DimensionMismatchError("Green's identity check needs a 1-D grid")
    x = grid.x
    if h is None:
        values = np.exp(-x ** 2)
    elif callable(h):
        values = np.asarray(h(x), dtype=float)
    else:
        values = np.asarray(h, dtype=float)
    v = _convolve(lam, grid, values)
    dx = grid.h
    second = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dx ** 2
    residual = lam ** 2 * v[1:-1] - second - values[1:-1]
    return float(np.max(np.abs(residual)))


# ============================================================================
# Schrödinger
# ============================================================================

def _hamiltonian_bands(potential: np.ndarray, dx: float) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of -D² + diag(V) on interior nodes."""
    interior = potential[1:-1]
    return 2.0 / dx ** 2 + interior, np.full(interior.size - 1, -1.0 / dx ** 2)


def schrodinger_fd(V: PotentialSpec, grid: Grid, n_states: int = 1,
                   check_decay: Optional[bool] = None) -> EigenSystem:
    """Lowest eigenpairs of -D² + V with Dirichlet ends, ascending.

    Eigenvectors are zero at both ends and normalized with trapezoid weights.
    check_decay (default: on for square wells) guards against a box too small
    for the ground state to decay.
    """
    if grid.dimension != 1 or grid.periodic:
        raise DimensionMismatchError('Schrödinger solver needs a compact 1-D grid')
    interior_count = grid.node_count - 2
    if not 1 <= n_states <= interior_count:
        raise ValidationError(f'n_states must lie in [1, {interior_count}], got {n_states}')

    dx = grid.h
    diag, off = _hamiltonian_bands(V.on_grid(grid), dx)
    energies, vectors = eigh_tridiagonal(diag, off, select='i', select_range=(0, n_states - 1))

    psi = np.zeros((grid.node_count, n_states))
    psi[1:-1] = vectors / math.sqrt(dx)
    signs = np.where(np.sum(psi, axis=0) < 0, -1.0, 1.0)
    psi = psi * signs[None, :]

    if check_decay is None:
        check_decay = V.shape == 'square-well'
    if check_decay:
        ground = np.abs(psi[:, 0])
        edge_ratio = max(ground[1], ground[-2]) / np.max(ground)
        if edge_ratio > BOX_EDGE_TOLERANCE:
            raise BoxTooSmallError(float(edge_ratio))

    weights = build_quadrature(grid, 'trapezoid').weights
    return EigenSystem(values=energies, vectors=psi, weights=weights, ordering='ascending')


def square_well_ground_energy(half_width: float, height: float) -> float:
    """Even ground state of the finite well: k tan(k a) = sqrt(V0 - k²), E = k²."""
    if not (half_width > 0 and height > 0):
        raise ValidationError('square well needs half_width > 0 and height > 0')
    a = half_width
    k_max = min(math.sqrt(height), math.pi / (2.0 * a))
    eps = 1e-14 * k_max

    def mismatch(k):
        return k * math.tan(k * a) - math.sqrt(max(height - k * k, 0.0))

    k = brentq(mismatch, eps, k_max - eps, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return k * k


def richardson_energy(coarse: float, fine: float, ratio: float = 2.0, order: float = 2.0) -> float:
    """Extrapolate two energies computed with spacings h and h/ratio."""
    return fine + (fine - coarse) / (ratio ** order - 1.0)


def schrodinger_cross_check(lam: float, pot: PotentialSpec, grid: Grid,
                            v0_bracket: Optional[Tuple[float, float]] = None,
                            normalization: str = 'green', xtol: float = 1e-12) -> CrossCheckReport:
    """Find V0 with V0 = E_0(V0) + λ², then verify ψ_0 = G_λ * (P ψ_0).

    E_0 is the finite-difference ground energy of the well of depth V0 and
    half-width pot.half_width; k² = V0 and P = k² - V.
    """
    if pot.shape != 'square-well':
        raise ValidationError('The cross-check needs a square-well potential')
    if not lam > 0:
        raise ValidationError(f'lambda must be > 0, got {lam}')
    lam2 = lam * lam
    a = pot.half_width

    if v0_bracket is None:
        confinement = (math.pi / (2.0 * a)) ** 2
        v0_bracket = (lam2, lam2 + 2.0 * confinement + 1.0)
    lo, hi = float(v0_bracket[0]), float(v0_bracket[1])
    if hi <= lam2:
        raise NoBoundStateError((lo, hi), f'lambda^2 = {lam2:.6g} lies above the bracket; '
                                          f'a bound state needs V0 > lambda^2')

    def well(v0: float) -> PotentialSpec:
        return PotentialSpec('square-well', half_width=a, height=v0)

    def gap(v0: float) -> float:
        return v0 - schrodinger_fd(well(v0), grid, 1, check_decay=False).values[0] - lam2

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo * g_hi > 0:
        raise NoBoundStateError((lo, hi), f'consistency gap has one sign: {g_lo:.3e}, {g_hi:.3e}')

    v0 = bisect(gap, lo, hi, xtol=xtol, maxiter=200)
    pot = replace(well(v0), k_squared=v0, lambda_=lam)
    eig = schrodinger_fd(pot, grid, 1)
    energy = float(eig.values[0])
    psi = eig.vectors[:, 0]

    weights = eig.weights
    residual = psi - _convolve(lam, grid, pot.source_term(grid) * psi, normalization)
    norm = math.sqrt(float(weights @ psi ** 2))
    residual_l2 = math.sqrt(float(weights @ residual ** 2)) / norm

    diag, off = _hamiltonian_bands(pot.on_grid(grid), grid.h)
    inner = psi[1:-1]
    h_psi = diag * inner
    h_psi[:-1] += off * inner[1:]
    h_psi[1:] += off * inner[:-1]
    rayleigh = float(inner @ h_psi / (inner @ inner))

    report = CrossCheckReport(lambda_=lam, v0=v0, k2=v0, energy=energy, residual_l2=residual_l2,
                              rayleigh_quotient=rayleigh, consistency_gap=v0 - energy - lam2,
                              bracket=(lo, hi), nodes=grid.node_count)
    logging.info(f'Cross-check lambda={lam:g}: V0={v0:.10g}, E={energy:.10g}, '
                 f'relative L2 residual {residual_l2:.3e}')
    return report
