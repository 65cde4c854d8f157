"""
errors.py - Exception hierarchy for the neural field toolkit

Configuration problems map to exit code 2, numerical failures to exit code 1.
Exceptions that abort a computation carry whatever partial result is useful
for diagnostics (best-so-far state, offending eigenvalue, scanned interval).
"""

from typing import List, Optional, Tuple


class NeuralFieldError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


# ============================================================================
# Configuration Errors
# ============================================================================

class ConfigError(NeuralFieldError):
    """Bad configuration or bad command-line usage."""

    exit_code = 2


class ParseError(ConfigError):
    """The config file is not valid JSON."""


class SchemaError(ConfigError):
    """The config parsed but violates the schema.

    All violations are collected; `violations` holds one message per problem,
    each prefixed with the dotted field path.
    """

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__(f'{len(self.violations)} schema violation(s): ' + '; '.join(self.violations))


class ValidationError(ConfigError):
    """A domain object was constructed with invalid parameters."""


# ============================================================================
# Numerical Errors
# ============================================================================

class NumericalError(NeuralFieldError):
    """A computation could not produce a trustworthy result."""


class DimensionMismatchError(NumericalError):
    pass


class InterpolationNotSupportedError(NumericalError):
    pass


class NonContractiveError(NumericalError):
    """q >= 1 for the requested segment length."""

    def __init__(self, q: float, rho: float):
        self.q = q
        self.rho = rho
        super().__init__(f'Picard map is not contractive: q={q:.6g} >= 1 at rho={rho:.6g} (shrink rho)')


class MaxIterExceededError(NumericalError):
    """Iteration budget exhausted; `result` holds the best-so-far outcome."""

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)


class NotSettledError(NumericalError):
    """Flow did not settle before t_max; `result` holds the last state."""

    def __init__(self, message: str, result=None):
        self.result = result
        super().__init__(message)


class NumericalBlowupError(NumericalError):
    """A state became non-finite; `snapshot` is the offending state."""

    def __init__(self, message: str, snapshot=None):
        self.snapshot = snapshot
        super().__init__(message)


class NotPSDError(NumericalError):
    def __init__(self, min_eigenvalue: float, max_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        self.max_eigenvalue = max_eigenvalue
        super().__init__(
            f'Kernel is not positive semidefinite: min eigenvalue {min_eigenvalue:.6g} '
            f'< -1e-8 * {max_eigenvalue:.6g}'
        )


class EigenResidualError(NumericalError):
    pass


class BoxTooSmallError(NumericalError):
    def __init__(self, edge_ratio: float):
        self.edge_ratio = edge_ratio
        super().__init__(
            f'Ground state has not decayed at the box edge: |psi_edge|/|psi_max| = {edge_ratio:.3e} > 1e-6'
        )


class NoBoundStateError(NumericalError):
    def __init__(self, interval: Tuple[float, float], detail: Optional[str] = None):
        self.interval = interval
        message = f'No consistent well depth in scanned interval [{interval[0]:.6g}, {interval[1]:.6g}]'
        if detail:
            message += f' ({detail})'
        super().__init__(message)


def exit_code_for(exc: BaseException) -> int:
    """Exit code for the CLI: 2 for configuration problems, 1 otherwise."""
    return getattr(exc, 'exit_code', 1)
