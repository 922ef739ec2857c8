"""
Oscilla - Hopf bifurcation toolkit for a spring-mounted body in a viscous stream
Command-line entry point
"""
import argparse
import logging
import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src import __version__
from src.errors import OscillaError
from src.pipeline import Pipeline, run_emit_plots
from src.run_config import load_config, resolve_jobs
from src.surrogates import SURROGATE_CASES

SUBCOMMANDS = ('steady', 'eigs', 'hopf', 'modes', 'scan', 'branch', 'simulate', 'surrogate',
               'hopf-pipeline', 'emit-plots')


def _floats(text: str):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _pair(text: str):
    values = _floats(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return tuple(values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='oscilla', description='Hopf bifurcation analysis of a '
                                     'spring-mounted body in a viscous incompressible stream')
    parser.add_argument('--version', action='version', version=f'oscilla {__version__}')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML run file (defaults from config/settings.py)')
    common.add_argument('--output', help='output directory (overrides [run] output_dir)')
    common.add_argument('--jobs', type=int, help='worker cap (OSCILLA_JOBS takes precedence)')
    common.add_argument('--seed', type=int, help='seed for randomized checks')
    common.add_argument('--dump-operators', action='store_true', help='write L0, L2 and S011 in coordinate format')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    common.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')

    sub = parser.add_subparsers(dest='command', required=True)
    p = sub.add_parser('steady', parents=[common], help='steady states along lambda')
    p.add_argument('--lambda', dest='lam', type=_floats, help='comma-separated lambda values')

    p = sub.add_parser('eigs', parents=[common], help='eigenvalues near the imaginary axis')
    p.add_argument('--lambda', dest='lam', type=float)
    p.add_argument('--window', type=_pair, help='zeta_min,zeta_max')

    p = sub.add_parser('hopf', parents=[common], help='locate the Hopf candidate')
    p.add_argument('--lambda-range', type=_pair)

    p = sub.add_parser('modes', parents=[common], help='oscillatory mode problems and K(k), M(k)')
    p.add_argument('--zeta', type=float)
    p.add_argument('--lambda', dest='lam', type=float)
    p.add_argument('--kmax', type=int)

    p = sub.add_parser('scan', parents=[common], help='resonance scan over the mass ratio')
    p.add_argument('--varpi-grid', type=_floats, help='comma-separated mass ratios')
    p.add_argument('--zeta', type=float)
    p.add_argument('--lambda', dest='lam', type=float)

    p = sub.add_parser('branch', parents=[common], help='continue the periodic branch')
    p.add_argument('--epsilon-max', type=float)
    p.add_argument('--points', type=int)

    p = sub.add_parser('simulate', parents=[common], help='nonlinear time integration')
    p.add_argument('--lambda', dest='lam', type=float)
    p.add_argument('--tfinal', type=float)
    p.add_argument('--dt', type=float)

    p = sub.add_parser('surrogate', parents=[common], help='run the engine on a surrogate system')
    p.add_argument('--case', required=True, choices=sorted(SURROGATE_CASES))
    p.add_argument('--epsilon-max', type=float)
    p.add_argument('--points', type=int)

    sub.add_parser('hopf-pipeline', parents=[common], help='steady -> eigs -> hopf -> branch')

    p = sub.add_parser('emit-plots', parents=[common], help='write plot scripts next to the CSVs')
    p.add_argument('artifact_dir', nargs='?', help='directory holding the CSVs')
    return parser


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)


def run(args) -> int:
    """Dispatch one subcommand; returns the process exit code"""
    config = load_config(args.config)
    if args.output:
        config.set('run', 'output_dir', args.output)
    if args.seed is not None:
        config.set('run', 'seed', args.seed)
    jobs = resolve_jobs(args.jobs, config)

    if args.command == 'emit-plots':
        written = run_emit_plots(args.artifact_dir or config.output_dir)
        print(f"✓ {len(written)} plot scripts written")
        return 0

    pipeline = Pipeline(config, args.command, jobs=jobs, dump_operators=args.dump_operators)
    cmd = args.command
    if cmd == 'steady':
        states = pipeline.steady(args.lam)
        print(f"✓ {len(states)} steady states written to steady.csv")
    elif cmd == 'eigs':
        lam = args.lam if args.lam is not None else config.model().lam
        pairs = pipeline.eigs(lam, args.window)
        print(f"✓ {len(pairs)} eigenvalues near the axis at lambda = {lam:g}")
    elif cmd == 'hopf':
        candidate = pipeline.hopf(args.lambda_range)
        print(f"✓ Candidate lambda_o = {candidate.lam_o:.8g}, zeta0 = {candidate.zeta0:.8g}")
    elif cmd == 'modes':
        summary = pipeline.modes(args.zeta, args.lam, args.kmax)
        print(f"✓ Mode problems solved for k = 1..{summary['kmax']}")
    elif cmd == 'scan':
        result = pipeline.scan(args.varpi_grid, args.zeta, args.lam)
        print(f"✓ Resonance slope {result['slope']:.4f} at k = {result['kbar']}")
    elif cmd == 'branch':
        payload = pipeline.branch(args.epsilon_max, args.points)
        if payload['accepted']:
            print(f"✓ Branch is {payload['criticality']['classification']}")
        else:
            print(f"⚠ Branch not continued: {payload['message']}")
    elif cmd == 'simulate':
        cfg = config['simulate']
        summary = pipeline.simulate(args.lam, args.tfinal, args.dt)
        obs = summary['observables']
        freq = 'none' if obs['frequency'] is None else f"{obs['frequency']:.6g}"
        print(f"✓ Simulated to t = {summary['t_final']:g} (dt = {cfg['dt'] if args.dt is None else args.dt:g}): "
              f"amplitude {obs['amplitude']:.4e}, frequency {freq}")
    elif cmd == 'surrogate':
        result = pipeline.surrogate(args.case, args.epsilon_max, args.points)
        mark = '✓' if result['accepted'] else '⚠'
        print(f"{mark} {args.case}: {result['message']}")
    elif cmd == 'hopf-pipeline':
        payload = pipeline.hopf_pipeline()
        if payload['accepted']:
            print(f"✓ Pipeline finished: branch is {payload['criticality']['classification']}")
        else:
            print(f"⚠ Pipeline stopped before the branch: {payload['message']}")
    pipeline.finish()
    return 0


def main(argv=None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if not args.quiet:
        print("=" * 60)
        print(f"Oscilla {__version__}")
        print("Hopf bifurcation of a spring-mounted body in a viscous stream")
        print("=" * 60)

    try:
        return run(args)
    except OscillaError as e:
        print(f"⚠ Error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\nRun terminated by user", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"\nError: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
