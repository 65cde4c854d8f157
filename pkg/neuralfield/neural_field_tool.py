#!/usr/bin/env python3
"""
neural_field_tool.py - Command-line tool for the plastic neural field toolkit

Subcommands:
    simulate      integrate the field, write trajectory.csv + bounds.csv
    stationary    stationary state by damped fixed point (fp) or long-time flow
    gainfield     learned kernel -> Mercer spectrum -> gain field -> Schrödinger cross-check
    schrodinger   finite-difference eigenpairs of a square well, optional cross-check
    study         plasticity-limit | dependence | contraction | l1
    constants     theory constants, q, ρ and derived bounds of a config
    validate      resolve and validate a config, echo it

Every run writes manifest.json into its output directory, also when it fails.
Exit codes: 0 success, 1 numerical failure, 2 configuration error.

Usage:
    python3 -m neuralfield.neural_field_tool simulate --config 1_Simulate/simulate_default.json --out out/sim
    python3 -m neuralfield.neural_field_tool study contraction --config 4_Studies/studies_default.json --out out/c
    python3 -m neuralfield.neural_field_tool schrodinger --well 1,2 --lambda 1 --out out/schrodinger

Date: October 2026
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict

from . import __version__
from .discretization import Grid, build_operator, build_quadrature, make_initial_state
from .errors import ConfigError, NeuralFieldError, NumericalBlowupError, exit_code_for
from .experiments import (contraction_measure, continuous_dependence_study, l1_bound_study,
                          plasticity_limit_study, STUDIES)
from .field_model import (compute_constants, contraction_factor, dependence_constant, global_bound,
                          l1_contraction_factor, plasticity_limit_factor)
from .gainfield import (PotentialSpec, build_learned_kernel, compare_gain_and_plastic, mercer_decompose,
                        presynaptic_gain, schrodinger_cross_check, schrodinger_fd, square_well_ground_energy)
from .output_io import (OutputLock, RunManifest, atomic_write_csv, atomic_write_json, setup_logging,
                        timestamp, write_state_csv, write_trajectory_csv)
from .run_config import RunConfig, SCHEMA, parse_config
from .solver import Trajectory, monitor_bounds, solve_global
from .stationary import equicontinuity_probe, find_stationary_fp, stationary_via_flow


@dataclass
class RunContext:
    """What a command needs: resolved config, output directory, manifest."""
    config: RunConfig
    output_dir: str
    manifest: RunManifest

    def path(self, name: str) -> str:
        path = os.path.join(self.output_dir, name)
        self.manifest.record_output(path)
        return path

    def operator(self):
        quad = build_quadrature(self.config.grid, self.config.quadrature)
        return build_operator(self.config.model.w, self.config.grid, quad)

    def initial_state(self):
        initial = self.config.initial
        return make_initial_state(self.config.grid, initial['kind'], initial['params'], self.config.seed)


# ============================================================================
# Commands
# ============================================================================

def cmd_simulate(args, ctx: RunContext) -> int:
    """Integrate over [0, t_end] and check the proved bounds."""
    cfg = ctx.config
    op = ctx.operator()
    constants = compute_constants(cfg.model, op.grid, op.quad)
    traj = solve_global(cfg.model, op, ctx.initial_state(), cfg.solver, constants, cfg.threads)
    report = monitor_bounds(traj, constants, cfg.model, op)

    write_trajectory_csv(ctx.path('trajectory.csv'), op.grid, traj)
    rows = [
        {'t': t, 'sup_u': s, 'bound': report.bound_theoretical, 'min_u': m, 'l1_u': l}
        for t, s, m, l in zip(report.times, report.sup_series, report.min_series, report.l1_series)
    ]
    atomic_write_csv(ctx.path('bounds.csv'), ['t', 'sup_u', 'bound', 'min_u', 'l1_u'], rows)

    logging.info(f'Snapshots: {len(traj)}, sup|u| = {report.sup_observed:.6g}, '
                 f'bound = {report.bound_theoretical:.6g}')
    if traj.segments:
        iterations = [s.iterations for s in traj.segments]
        logging.info(f'Picard segments: {len(iterations)}, iterations per segment {min(iterations)}-{max(iterations)}')
    if report.positivity_applicable:
        logging.info(f'Positivity violations: {report.positivity_violations}')
    return 0 if report.within_bound and report.positivity_violations == 0 else 1


def cmd_stationary(args, ctx: RunContext) -> int:
    """Stationary state by damped fixed point or by flow."""
    cfg = ctx.config
    settings = cfg.stationary
    method = args.method or settings['method']
    op = ctx.operator()
    constants = compute_constants(cfg.model, op.grid, op.quad)
    u_init = ctx.initial_state()

    def write(result):
        write_state_csv(ctx.path('u_inf.csv'), op.grid, result.u_inf.values)
        summary = result.to_dict()
        summary['gamma_cw'] = cfg.model.gamma * constants.c_w
        if result.samples and op.grid.dimension == 1:
            table = equicontinuity_probe(Trajectory(states=result.samples), op.grid,
                                         gamma_cw=summary['gamma_cw'])
            summary['equicontinuity'] = {'moduli': table.rows(), 'monotone': table.monotone}
        atomic_write_json(ctx.path('stationary.json'), summary)

    try:
        if method == 'fp':
            result = find_stationary_fp(cfg.model, op, u_init, settings['damping'], settings['tol'],
                                        settings['max_iter'], constants, cfg.threads)
        else:
            result = stationary_via_flow(cfg.model, op, u_init, settings['t_max'], settings['settle_tol'],
                                         settings['dt'], constants, cfg.threads)
    except NeuralFieldError as e:
        if getattr(e, 'result', None) is not None:
            write(e.result)
        raise
    write(result)
    logging.info(f'Stationary state ({result.method}): residual {result.residual_sup:.3e}, '
                 f'{result.iterations} iteration(s)')
    return 0


def _cross_check_grid(settings: Dict) -> Grid:
    a, b = settings['box']
    return Grid(dimension=1, bounds=((a, b),), nodes_per_axis=(settings['nodes'],))


def cmd_gainfield(args, ctx: RunContext) -> int:
    """Stationary state -> learned kernel -> spectrum -> φ_pre -> Schrödinger cross-check."""
    cfg = ctx.config
    settings = cfg.gainfield
    op = ctx.operator()
    constants = compute_constants(cfg.model, op.grid, op.quad)
    st = cfg.stationary
    stationary = find_stationary_fp(cfg.model, op, ctx.initial_state(), st['damping'], st['tol'],
                                    st['max_iter'], constants, cfg.threads)

    learned = build_learned_kernel(stationary.u_inf, cfg.model, op.grid, settings['sign'])
    eig = mercer_decompose(learned, op.quad)
    lam = settings['lambda']
    K_pre = settings['K_pre'] if settings['K_pre'] is not None else 1.0 / lam
    gain = presynaptic_gain(eig, K_pre)

    atomic_write_csv(ctx.path('eigs.csv'), ['i', 'sigma'],
                     [{'i': i + 1, 'sigma': float(s)} for i, s in enumerate(eig.values)])
    phi_rows = []
    columns = ['x'] if op.grid.dimension == 1 else ['x', 'y']
    for i, phi in enumerate(gain.phi_pre):
        row = {'phi': float(phi)}
        for axis, name in enumerate(columns):
            row[name] = float(op.grid.nodes[i, axis])
        phi_rows.append(row)
    atomic_write_csv(ctx.path('phi_pre.csv'), columns + ['phi'], phi_rows)

    pot = PotentialSpec('square-well', half_width=settings['half_width'])
    bracket = tuple(settings['v0_bracket']) if settings['v0_bracket'] else None
    report = schrodinger_cross_check(lam, pot, _cross_check_grid(settings), bracket, settings['normalization'])
    atomic_write_json(ctx.path('crosscheck.json'), report.to_dict())

    if settings['compare']:
        comparison = compare_gain_and_plastic(cfg.model, op, gain, ctx.initial_state(), cfg.solver, cfg.threads)
        atomic_write_json(ctx.path('gain_comparison.json'), comparison.to_dict())

    logging.info(f'Mercer: sigma_1 = {eig.values[0]:.6g}, min sigma = {eig.values[-1]:.3e}; '
                 f'phi_pre in [{gain.phi_pre.min():.6g}, {gain.phi_pre.max():.6g}]')
    return 0


def cmd_schrodinger(args, ctx: RunContext) -> int:
    """FD eigenpairs of a square well and/or the λ cross-check."""
    settings = ctx.config.gainfield
    grid = _cross_check_grid(settings)
    half_width, height = settings['half_width'], None
    if args.well:
        try:
            half_width, height = (float(v) for v in args.well.split(','))
        except ValueError:
            raise ConfigError(f'--well expects "a,V0", got {args.well!r}')
    n_states = args.n_states or settings['n_states']

    if height is not None:
        pot = PotentialSpec('square-well', half_width=half_width, height=height)
        eig = schrodinger_fd(pot, grid, n_states)
        atomic_write_csv(ctx.path('schrodinger_eigs.csv'), ['i', 'energy'],
                         [{'i': i, 'energy': float(e)} for i, e in enumerate(eig.values)])
        fieldnames = ['x'] + [f'psi_{i}' for i in range(n_states)]
        rows = [dict({'x': float(x)}, **{f'psi_{i}': float(eig.vectors[j, i]) for i in range(n_states)})
                for j, x in enumerate(grid.x)]
        atomic_write_csv(ctx.path('schrodinger_states.csv'), fieldnames, rows)
        summary = {'half_width': half_width, 'height': height, 'nodes': grid.node_count,
                   'energies': [float(e) for e in eig.values]}
        if height > 0:
            oracle = square_well_ground_energy(half_width, height)
            summary['ground_energy_oracle'] = oracle
            summary['ground_energy_difference'] = float(eig.values[0]) - oracle
        atomic_write_json(ctx.path('schrodinger.json'), summary)
        logging.info(f'Square well a={half_width:g}, V0={height:g}: E_0 = {eig.values[0]:.10g}')

    lam = args.lambda_ if args.lambda_ is not None else (settings['lambda'] if height is None else None)
    if lam is not None:
        bracket = tuple(settings['v0_bracket']) if settings['v0_bracket'] else None
        report = schrodinger_cross_check(lam, PotentialSpec('square-well', half_width=half_width), grid,
                                         bracket, settings['normalization'])
        atomic_write_json(ctx.path('crosscheck.json'), report.to_dict())
    return 0


def cmd_study(args, ctx: RunContext) -> int:
    """Run one study and write <study>.csv + verdict.json."""
    cfg = ctx.config
    settings = cfg.study
    op = ctx.operator()
    u0 = ctx.initial_state()

    if args.name == 'plasticity-limit':
        result = plasticity_limit_study(cfg.model, op, u0, settings['gammas'], cfg.solver,
                                        settings['vary_initial'], cfg.threads)
    elif args.name == 'dependence':
        result = continuous_dependence_study(cfg.model, op, u0, settings['epsilons'], settings['rho'], cfg.solver)
    elif args.name == 'contraction':
        result = contraction_measure(cfg.model, op, settings['rho'], settings['n_pairs'], cfg.seed, cfg.solver,
                                     settings['contraction_slack'])
    else:
        initial_states = {}
        for index, entry in enumerate(settings['l1_initial']):
            label = f'{index}:{entry["kind"]}'
            initial_states[label] = make_initial_state(cfg.grid, entry['kind'], entry.get('params'), cfg.seed)
        result = l1_bound_study(cfg.model, op, initial_states, cfg.solver, settings['l1_slack'], cfg.threads)

    fieldnames = list(result.rows[0].keys()) if result.rows else ['measured', 'bound', 'slack', 'margin', 'pass']
    atomic_write_csv(ctx.path(f'{args.name}.csv'), fieldnames, result.rows)
    atomic_write_json(ctx.path('verdict.json'), result.verdict())
    return 0 if result.passed else 1


def cmd_constants(args, ctx: RunContext) -> int:
    """Theory constants and every derived quantity of the config."""
    cfg = ctx.config
    quad = build_quadrature(cfg.grid, cfg.quadrature)
    constants = compute_constants(cfg.model, cfg.grid, quad)
    gamma = cfg.model.gamma
    rho = cfg.solver.resolve_rho(constants, gamma)
    q = contraction_factor(constants, gamma, rho)
    summary = {
        'constants': constants.to_dict(),
        'gamma': gamma,
        'rho': rho,
        'q': q,
        'dependence_constant': dependence_constant(q) if q < 1 else None,
        'plasticity_limit_factor': plasticity_limit_factor(constants, gamma, rho),
        'l1_contraction_factor': l1_contraction_factor(constants, gamma, rho, cfg.grid.measure),
        'global_bound_zero_data': global_bound(0.0, gamma, constants.c_w),
        'gamma_cw': gamma * constants.c_w,
    }
    atomic_write_json(ctx.path('constants.json'), summary)
    for name in ('c_inf', 'c_w', 'k_w', 'L', 'K'):
        logging.info(f'  {name:6s} = {getattr(constants, name):.10g} ({constants.sources[name]})')
    logging.info(f'  rho    = {rho:.10g}, q = {q:.10g}')
    return 0


def cmd_validate(args, ctx: RunContext) -> int:
    """Echo the resolved config."""
    atomic_write_json(ctx.path('config_echo.json'), ctx.config.to_dict())
    logging.info('Config is valid')
    return 0


COMMAND_HANDLERS: Dict[str, Callable] = {
    'simulate': cmd_simulate,
    'stationary': cmd_stationary,
    'gainfield': cmd_gainfield,
    'schrodinger': cmd_schrodinger,
    'study': cmd_study,
    'constants': cmd_constants,
    'validate': cmd_validate,
}


# ============================================================================
# Run Orchestration
# ============================================================================

def _manifest_theory(manifest: RunManifest, config: RunConfig):
    """Constants, q and ρ for the manifest; left empty when they cannot be formed."""
    try:
        quad = build_quadrature(config.grid, config.quadrature)
        constants = compute_constants(config.model, config.grid, quad)
        rho = config.solver.resolve_rho(constants, config.model.gamma)
    except NeuralFieldError as e:
        logging.debug(f'Manifest constants unavailable: {e}')
        return
    manifest.constants = constants.to_dict()
    manifest.rho = rho
    manifest.q = contraction_factor(constants, config.model.gamma, rho)
    manifest.l1_contraction = l1_contraction_factor(constants, config.model.gamma, rho, config.grid.measure)


def run(command: str, args) -> int:
    """Parse the config, lock the output directory, run one command and write manifest.json.

    A directory locked by another run is left untouched. Returns the exit code.
    """
    start = time.time()
    overrides = {'seed': args.seed, 'threads': args.threads, 'output_dir': args.out}
    output_dir = args.out or SCHEMA['output_dir'][1]
    config = None
    exit_code = 0
    error = None

    try:
        config = parse_config(args.config, overrides)
        output_dir = config.output_dir
    except NeuralFieldError as e:
        error = e

    quiet = getattr(args, 'quiet', False)
    lock = OutputLock(output_dir)
    try:
        lock.acquire()
    except ConfigError as e:
        # the directory belongs to another run: its log and manifest stay untouched
        setup_logging(None, quiet)
        logging.error(f'{type(e).__name__}: {e}')
        return exit_code_for(e)

    setup_logging(output_dir, quiet)
    manifest = RunManifest(command=command if command != 'study' else f'study {args.name}',
                           config=config.to_dict() if config else {}, tool_version=__version__,
                           started=timestamp(config.timezone if config else 'UTC'))
    logging.info('=' * 70)
    logging.info(f'Neural field tool - {manifest.command}')
    logging.info('=' * 70)
    logging.info(f'Config: {args.config or "(defaults)"}')
    logging.info(f'Output directory: {output_dir}')

    try:
        if error is not None:
            raise error
        _manifest_theory(manifest, config)
        if manifest.q is not None:
            logging.info(f'rho = {manifest.rho:.6g}, q = {manifest.q:.6g}')
        ctx = RunContext(config=config, output_dir=output_dir, manifest=manifest)
        exit_code = COMMAND_HANDLERS[command](args, ctx)
    except NeuralFieldError as e:
        exit_code = exit_code_for(e)
        logging.error(f'{type(e).__name__}: {e}')
        for violation in getattr(e, 'violations', []):
            logging.error(f'  {violation}')
        manifest.error = {'type': type(e).__name__, 'message': str(e), 'exit_code': exit_code}
        if isinstance(e, NumericalBlowupError) and e.snapshot is not None and config is not None:
            path = os.path.join(output_dir, 'diagnostic_snapshot.csv')
            write_state_csv(path, config.grid, e.snapshot.values)
            manifest.record_output(path)
    finally:
        manifest.wall_seconds = time.time() - start
        manifest.write(output_dir)
        lock.release()

    logging.info('=' * 70)
    logging.info(f'COMPLETE - exit code {exit_code}, {len(manifest.outputs)} output file(s), '
                 f'{manifest.wall_seconds:.2f}s')
    logging.info('=' * 70)
    return exit_code


# ============================================================================
# Main Entry Point
# ============================================================================

def add_common_args(parser):
    """Global flags shared by every subcommand."""
    parser.add_argument('--config', help='Run config JSON (default: built-in defaults)')
    parser.add_argument('--out', help='Output directory (overrides output_dir in the config)')
    parser.add_argument('--seed', type=int, help='Random seed (overrides the config)')
    parser.add_argument('--threads', type=int, help='Worker threads/processes (overrides the config)')
    parser.add_argument('--quiet', action='store_true', help='Quiet mode - log to file only')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Neural field toolkit: simulation, bound checks, stationary states and gain fields',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate the default instance
  python3 -m neuralfield.neural_field_tool simulate --out out/simulate

  # Stationary state by long-time flow
  python3 -m neuralfield.neural_field_tool stationary --method flow --config 2_Stationary/stationary_default.json

  # Square well ground state and the lambda = 1 cross-check
  python3 -m neuralfield.neural_field_tool schrodinger --well 1,2 --lambda 1 --out out/schrodinger

  # Contraction study with 4 workers
  python3 -m neuralfield.neural_field_tool study contraction --threads 4 --out out/contraction

Environment overrides: NF_<SECTION>_<KEY>, e.g. NF_MODEL_GAMMA=0.2 NF_SOLVER_T_END=20
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    simulate_parser = subparsers.add_parser('simulate', help='Integrate the neural field')
    add_common_args(simulate_parser)

    stationary_parser = subparsers.add_parser('stationary', help='Compute a stationary state')
    add_common_args(stationary_parser)
    stationary_parser.add_argument('--method', choices=['fp', 'flow'], help='fp (damped fixed point) or flow')

    gain_parser = subparsers.add_parser('gainfield', help='Learned kernel, gain field, Schrödinger cross-check')
    add_common_args(gain_parser)

    schrodinger_parser = subparsers.add_parser('schrodinger', help='Square-well eigensolver and cross-check')
    add_common_args(schrodinger_parser)
    schrodinger_parser.add_argument('--well', help='Square well "a,V0" (half width, height)')
    schrodinger_parser.add_argument('--lambda', dest='lambda_', type=float, help='Kernel decay for the cross-check')
    schrodinger_parser.add_argument('--n-states', dest='n_states', type=int, help='Number of eigenpairs')

    study_parser = subparsers.add_parser('study', help='Run a theorem study')
    study_parser.add_argument('name', choices=list(STUDIES), help='Study to run')
    add_common_args(study_parser)

    constants_parser = subparsers.add_parser('constants', help='Theory constants of a config')
    add_common_args(constants_parser)

    validate_parser = subparsers.add_parser('validate', help='Validate a config')
    add_common_args(validate_parser)
    return parser


def main(argv=None):
    """Main entry point with subcommand routing."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command not in COMMAND_HANDLERS:
        parser.print_help()
        sys.exit(2)
    sys.exit(run(args.command, args))


if __name__ == '__main__':
    main()
