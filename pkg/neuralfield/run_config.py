"""
run_config.py - JSON run configuration: defaults, environment overrides, validation

A run config is one JSON object with the sections

    model, grid, quadrature, solver, initial, stationary, gainfield, study,
    seed, threads, timezone, output_dir

Every key has a default, so `{}` is a valid config. Values are resolved with
the precedence

    command-line flags > NF_* environment variables > config file > defaults

Environment variables are named NF_ + the upper-cased key path joined with
underscores (NF_MODEL_GAMMA, NF_SOLVER_T_END, NF_GRID_NODES); their values are
parsed as JSON and fall back to plain strings.

Validation collects every violation (unknown keys, wrong types, ranges, mode
restrictions) and raises a single SchemaError listing all of them.
"""

import copy
import json
import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import pytz

from .discretization import INITIAL_KINDS, QUADRATURE_RULES, Grid
from .errors import ConfigError, ParseError, SchemaError, ValidationError
from .field_model import (FIRING_KINDS, KERNEL_KINDS, LEARNING_KINDS, MODES, FiringRate, LearningKernel,
                          ModelSpec, SynapticKernel)
from .gainfield import GREEN_NORMALIZATIONS
from .solver import METHODS, SolverConfig


ENV_PREFIX = 'NF_'

# Type tags used by the schema
NUMBER, INTEGER, STRING, BOOLEAN, LIST, OBJECT = 'number', 'integer', 'string', 'boolean', 'list', 'object'
OPTIONAL_NUMBER = 'number-or-null'
OPTIONAL_LIST = 'list-or-null'

# Leaf key -> (type, default)
SCHEMA: Dict[str, Any] = {
    'model': {
        'kernel': {'kind': (STRING, 'exponential'), 'params': (OBJECT, {})},
        'firing': {'kind': (STRING, 'sigmoid'), 'params': (OBJECT, {})},
        'learning': {'kind': (STRING, 'gaussian'), 'params': (OBJECT, {})},
        'gamma': (NUMBER, 0.5),
        'mode': (STRING, 'well-posed'),
    },
    'grid': {
        'dimension': (INTEGER, 1),
        'bounds': (LIST, [[-10.0, 10.0]]),
        'nodes': (LIST, [201]),
        'boundary': (STRING, 'compact'),
    },
    'quadrature': (STRING, 'trapezoid'),
    'solver': {
        'method': (STRING, 'picard'),
        'dt': (NUMBER, 0.01),
        'segment_rho': (OPTIONAL_NUMBER, None),
        'picard_tol': (NUMBER, 1e-10),
        'picard_max_iter': (INTEGER, 200),
        't_end': (NUMBER, 5.0),
        'safety': (NUMBER, 0.5),
    },
    'initial': {'kind': (STRING, 'gaussian-bump'), 'params': (OBJECT, {})},
    'stationary': {
        'method': (STRING, 'fp'),
        'damping': (NUMBER, 0.5),
        'tol': (NUMBER, 1e-10),
        'max_iter': (INTEGER, 10000),
        't_max': (NUMBER, 500.0),
        'settle_tol': (NUMBER, 1e-10),
        'dt': (NUMBER, 0.5),
    },
    'gainfield': {
        'sign': (INTEGER, 1),
        'K_pre': (OPTIONAL_NUMBER, None),
        'lambda': (NUMBER, 1.0),
        'half_width': (NUMBER, 1.0),
        'box': (LIST, [-20.0, 20.0]),
        'nodes': (INTEGER, 2001),
        'n_states': (INTEGER, 1),
        'normalization': (STRING, 'green'),
        'v0_bracket': (OPTIONAL_LIST, None),
        'compare': (BOOLEAN, False),
    },
    'study': {
        'gammas': (LIST, [0.4, 0.2, 0.1, 0.05, 0.025]),
        'epsilons': (LIST, [0.2, 0.1, 0.05]),
        'rho': (OPTIONAL_NUMBER, None),
        'n_pairs': (INTEGER, 200),
        'contraction_slack': (NUMBER, 0.01),
        'l1_slack': (NUMBER, 1e-6),
        'l1_initial': (LIST, [
            {'kind': 'constant', 'params': {'value': 0.0}},
            {'kind': 'step', 'params': {'value': 1.0}},
            {'kind': 'gaussian-bump', 'params': {'amplitude': 2.0}},
        ]),
        'vary_initial': (BOOLEAN, False),
    },
    'seed': (INTEGER, 0),
    'threads': (INTEGER, 1),
    'timezone': (STRING, 'UTC'),
    'output_dir': (STRING, 'output'),
}

PARAM_DEFAULTS = {
    'kernel': {
        'exponential': {'amplitude': 0.5, 'decay': 1.0},
        'mexican-hat': {'amplitude': 1.0, 'scale': 1.0},
        'tabulated': {'matrix': None},
    },
    'firing': {
        'sigmoid': {'slope': 1.0, 'threshold': 0.0},
        'scaled-arctan': {'scale': 1.0},
        'linear': {},
        'clamped': {'slope': 1.0, 'threshold': 0.0, 'ceiling': 1.0},
    },
    'learning': {
        'gaussian': {'width': 1.0},
    },
    'initial': {
        'constant': {'value': 0.0},
        'gaussian-bump': {'amplitude': 1.0, 'width': 1.0, 'center': None},
        'step': {'value': 1.0},
        'cosine': {'amplitude': 1.0, 'offset': 0.0, 'modes': 1.0},
        'random': {'low': 0.0, 'high': 1.0},
    },
}

KIND_CHOICES = {
    'kernel': KERNEL_KINDS,
    'firing': FIRING_KINDS,
    'learning': LEARNING_KINDS,
    'initial': INITIAL_KINDS,
}


@dataclass
class RunConfig:
    model: ModelSpec
    grid: Grid
    quadrature: str
    solver: SolverConfig
    initial: Dict
    stationary: Dict
    gainfield: Dict
    study: Dict
    seed: int
    threads: int
    timezone: str
    output_dir: str
    echo: Dict

    def to_dict(self) -> Dict:
        return copy.deepcopy(self.echo)


# ============================================================================
# Schema Walk
# ============================================================================

def _defaults(schema: Mapping) -> Dict:
    out = {}
    for key, spec in schema.items():
        out[key] = _defaults(spec) if isinstance(spec, dict) else copy.deepcopy(spec[1])
    return out


def _leaf_paths(schema: Mapping, prefix: Tuple[str, ...] = ()) -> List[Tuple[str, ...]]:
    paths = []
    for key, spec in schema.items():
        if isinstance(spec, dict):
            paths.extend(_leaf_paths(spec, prefix + (key,)))
        else:
            paths.append(prefix + (key,))
    return paths


def _type_ok(tag: str, value: Any) -> bool:
    is_number = isinstance(value, (int, float)) and not isinstance(value, bool)
    if tag == NUMBER:
        return is_number
    if tag == OPTIONAL_NUMBER:
        return value is None or is_number
    if tag == INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if tag == STRING:
        return isinstance(value, str)
    if tag == BOOLEAN:
        return isinstance(value, bool)
    if tag == LIST:
        return isinstance(value, list)
    if tag == OPTIONAL_LIST:
        return value is None or isinstance(value, list)
    return isinstance(value, dict)


def _merge(schema: Mapping, data: Any, path: str, violations: List[str]) -> Dict:
    """Defaults overlaid with data; unknown keys and wrong types become violations."""
    merged = _defaults(schema)
    if not isinstance(data, dict):
        violations.append(f'{path or "<root>"}: expected an object')
        return merged
    for key, value in data.items():
        key_path = f'{path}.{key}' if path else key
        if key not in schema:
            violations.append(f'{key_path}: unknown key')
            continue
        spec = schema[key]
        if isinstance(spec, dict):
            merged[key] = _merge(spec, value, key_path, violations)
        elif not _type_ok(spec[0], value):
            violations.append(f'{key_path}: expected {spec[0]}, got {type(value).__name__}')
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _fill_params(section: Dict, family: str, path: str, violations: List[str]):
    """Kind-specific parameter defaults; unknown parameter names are violations."""
    kind = section.get('kind')
    if kind not in KIND_CHOICES[family]:
        violations.append(f'{path}.kind: unknown kind {kind!r} (expected one of {", ".join(KIND_CHOICES[family])})')
        return
    defaults = PARAM_DEFAULTS[family][kind]
    params = section.get('params') or {}
    for name in params:
        if name not in defaults:
            violations.append(f'{path}.params.{name}: unknown parameter for {kind}')
    filled = dict(defaults)
    filled.update({k: v for k, v in params.items() if k in defaults})
    section['params'] = filled


# ============================================================================
# Environment Overrides
# ============================================================================

def env_key_map() -> Dict[str, Tuple[str, ...]]:
    """NF_* variable name -> key path for every known leaf and kind parameter."""
    paths = _leaf_paths(SCHEMA)
    for family, kinds in PARAM_DEFAULTS.items():
        prefix = ('model', family) if family != 'initial' else ('initial',)
        for params in kinds.values():
            paths.extend(prefix + ('params', name) for name in params)
    return {ENV_PREFIX + '_'.join(p).upper(): p for p in paths}


def _parse_env_value(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text


def _set_path(data: Dict, path: Tuple[str, ...], value: Any):
    node = data
    for key in path[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[path[-1]] = value


def apply_env_overrides(data: Dict, env: Optional[Mapping[str, str]] = None) -> List[str]:
    """Apply NF_* overrides in place; returns the variable names used."""
    env = os.environ if env is None else env
    used = []
    for name, path in sorted(env_key_map().items()):
        if name in env:
            _set_path(data, path, _parse_env_value(env[name]))
            used.append(name)
    return used


# ============================================================================
# Validation
# ============================================================================

def _check_range(violations: List[str], path: str, value, low=None, high=None, strict_low=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        return
    if low is not None and (value <= low if strict_low else value < low):
        violations.append(f'{path}: must be {">" if strict_low else ">="} {low}, got {value}')
    if high is not None and value > high:
        violations.append(f'{path}: must be <= {high}, got {value}')


def _check_choice(violations: List[str], path: str, value, choices):
    if isinstance(value, str) and value not in choices:
        violations.append(f'{path}: unknown value {value!r} (expected one of {", ".join(choices)})')


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _is_interval(value) -> bool:
    """[a, b] with finite numbers a < b."""
    return (isinstance(value, list) and len(value) == 2 and all(_is_number(v) for v in value)
            and value[0] < value[1])


def validate(config: Dict) -> List[str]:
    """Range and cross-field checks on a merged config."""
    violations: List[str] = []
    model = config['model']
    _check_range(violations, 'model.gamma', model['gamma'], low=0.0)
    _check_choice(violations, 'model.mode', model['mode'], MODES)
    if model['firing'].get('kind') == 'linear' and model['mode'] == 'well-posed':
        violations.append('model.firing.kind: linear firing is unbounded and only allowed in gain-field mode')
    if model['firing'].get('kind') == 'heaviside':
        violations.append('model.firing.kind: heaviside firing rates are not supported (discontinuous flow)')

    grid = config['grid']
    _check_range(violations, 'grid.dimension', grid['dimension'], low=1, high=2)
    _check_choice(violations, 'grid.boundary', grid['boundary'], ('compact', 'periodic'))
    for n in grid['nodes']:
        if not isinstance(n, int) or isinstance(n, bool) or n < 3:
            violations.append(f'grid.nodes: every node count must be an integer >= 3, got {n}')
    _check_choice(violations, 'quadrature', config['quadrature'], QUADRATURE_RULES)
    if config['quadrature'] == 'simpson' and any(isinstance(n, int) and n % 2 == 0 for n in grid['nodes']):
        violations.append('quadrature: simpson needs an odd node count per axis')

    solver = config['solver']
    _check_choice(violations, 'solver.method', solver['method'], METHODS)
    _check_range(violations, 'solver.dt', solver['dt'], low=0.0, strict_low=True)
    _check_range(violations, 'solver.t_end', solver['t_end'], low=0.0, strict_low=True)
    _check_range(violations, 'solver.picard_tol', solver['picard_tol'], low=0.0, strict_low=True)
    _check_range(violations, 'solver.picard_max_iter', solver['picard_max_iter'], low=1)
    _check_range(violations, 'solver.safety', solver['safety'], low=0.0, high=1.0, strict_low=True)
    if solver['segment_rho'] is not None:
        _check_range(violations, 'solver.segment_rho', solver['segment_rho'], low=0.0, strict_low=True)
        if isinstance(solver['dt'], (int, float)) and solver['dt'] > solver['segment_rho']:
            violations.append('solver.dt: must not exceed solver.segment_rho')

    stationary = config['stationary']
    _check_choice(violations, 'stationary.method', stationary['method'], ('fp', 'flow'))
    _check_range(violations, 'stationary.damping', stationary['damping'], low=0.0, high=1.0, strict_low=True)
    for key in ('tol', 'settle_tol', 't_max', 'dt'):
        _check_range(violations, f'stationary.{key}', stationary[key], low=0.0, strict_low=True)

    gain = config['gainfield']
    if gain['sign'] not in (1, -1):
        violations.append(f'gainfield.sign: must be 1 or -1, got {gain["sign"]}')
    _check_range(violations, 'gainfield.lambda', gain['lambda'], low=0.0, strict_low=True)
    _check_range(violations, 'gainfield.half_width', gain['half_width'], low=0.0, strict_low=True)
    _check_range(violations, 'gainfield.nodes', gain['nodes'], low=3)
    _check_range(violations, 'gainfield.n_states', gain['n_states'], low=1)
    if gain['K_pre'] is not None:
        _check_range(violations, 'gainfield.K_pre', gain['K_pre'], low=0.0, strict_low=True)
    _check_choice(violations, 'gainfield.normalization', gain['normalization'], tuple(GREEN_NORMALIZATIONS))
    if not _is_interval(gain['box']):
        violations.append(f'gainfield.box: expected [a, b] with a < b, got {gain["box"]}')
    if gain['v0_bracket'] is not None and not _is_interval(gain['v0_bracket']):
        violations.append(f'gainfield.v0_bracket: expected [low, high] with low < high, got {gain["v0_bracket"]}')

    study = config['study']
    if any(not _is_number(g) or g < 0 for g in study['gammas']):
        violations.append('study.gammas: every value must be a number >= 0')
    _check_range(violations, 'study.n_pairs', study['n_pairs'], low=1)
    for index, entry in enumerate(study['l1_initial']):
        if not isinstance(entry, dict) or entry.get('kind') not in INITIAL_KINDS:
            violations.append(f'study.l1_initial[{index}]: expected {{"kind": one of {", ".join(INITIAL_KINDS)}}}')

    _check_range(violations, 'threads', config['threads'], low=1)
    try:
        pytz.timezone(config['timezone'])
    except pytz.exceptions.UnknownTimeZoneError:
        violations.append(f'timezone: invalid timezone {config["timezone"]!r}; use IANA names like '
                          f'"UTC", "Europe/London", "Asia/Singapore"')
    return violations


# ============================================================================
# Entry Point
# ============================================================================

def _construct(violations: List[str], section: str, build: Callable[[], Any]):
    """Build a domain object unless its section already has violations; its error becomes one."""
    if any(v.startswith((f'{section}.', f'{section}:')) for v in violations):
        return None
    try:
        return build()
    except (ValidationError, TypeError, ValueError) as e:
        violations.append(f'{section}: {e}')
        return None


def load_config_file(path: Optional[str]) -> Dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f'Config file not found: {path}')
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f'Malformed JSON in {path}: {e}')


def build_run_config(data: Dict, overrides: Optional[Dict[str, Any]] = None,
                     env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Resolve defaults, environment and CLI overrides, then validate and build."""
    data = copy.deepcopy(data)
    if not isinstance(data, dict):
        raise SchemaError(['<root>: expected an object'])
    apply_env_overrides(data, env)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, tuple(dotted.split('.')), value)

    grid_data = data.get('grid')
    if isinstance(grid_data, dict) and isinstance(grid_data.get('nodes'), int):
        dimension = grid_data.get('dimension', 1)
        grid_data['nodes'] = [grid_data['nodes']] * (dimension if dimension in (1, 2) else 1)

    violations: List[str] = []
    merged = _merge(SCHEMA, data, '', violations)
    for family in ('kernel', 'firing', 'learning'):
        _fill_params(merged['model'][family], family, f'model.{family}', violations)
    _fill_params(merged['initial'], 'initial', 'initial', violations)
    violations.extend(validate(merged))

    model = _construct(violations, 'model', lambda: ModelSpec(
        w=SynapticKernel.from_dict(merged['model']['kernel']),
        f=FiringRate.from_dict(merged['model']['firing']),
        g=LearningKernel.from_dict(merged['model']['learning']),
        gamma=float(merged['model']['gamma']),
        mode=merged['model']['mode'],
    ))
    grid = _construct(violations, 'grid', lambda: Grid.from_dict(merged['grid']))
    solver = _construct(violations, 'solver', lambda: SolverConfig(**merged['solver']))
    if violations:
        raise SchemaError(violations)

    return RunConfig(
        model=model, grid=grid, quadrature=merged['quadrature'], solver=solver,
        initial=merged['initial'], stationary=merged['stationary'], gainfield=merged['gainfield'],
        study=merged['study'], seed=merged['seed'], threads=merged['threads'],
        timezone=merged['timezone'], output_dir=merged['output_dir'], echo=merged,
    )


def parse_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None,
                 env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Load, resolve and validate a run config file (None means all defaults)."""
    return build_run_config(load_config_file(path), overrides, env)
