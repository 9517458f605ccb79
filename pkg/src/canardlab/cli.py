"""
Command line interface ``canard-lab`` with the subcommands ``analyze``, ``simulate`` and ``sweep``.

Exit codes: 0 on success, 1 on numerical failures (partial results are still written), 2 on
usage or model errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from canardlab import __version__
from canardlab.exceptions import EvaluationException, IntegrationException, ModelException
from canardlab.odeint import METHODS, SolverOptions
from canardlab.report import analyze, report_to_dict, simulate_to_files
from canardlab.slowfast import BUILTIN_MODELS, SlowFastSystem, builtin_system, load_model, with_params
from canardlab.sweep import MODES, parse_values, run_sweep
from canardlab.utils import dump_dict_to_file, dumps

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Invalid command line values that argparse cannot check on its own"""

    ...


def _split_assignment(text: str, flag: str) -> tuple[str, str]:
    name, sep, value = text.partition("=")
    if sep == "" or name.strip() == "":
        raise UsageError(f"{flag} expects name=value, got '{text}'")
    return name.strip(), value.strip()


def parse_params(items: Sequence[str]) -> dict[str, float]:
    params = {}
    for item in items:
        name, value = _split_assignment(item, "--param")
        try:
            params[name] = float(value)
        except ValueError:
            raise UsageError(f"--param {name}: '{value}' is not a number") from None
    return params


def parse_box(items: Sequence[str]) -> dict[str, tuple[float, float]]:
    box = {}
    for item in items:
        name, interval = _split_assignment(item, "--box")
        try:
            lo, hi = (float(v) for v in interval.split(":"))
        except ValueError:
            raise UsageError(f"--box {name}: expected lo:hi, got '{interval}'") from None
        box[name] = (lo, hi)
    return box


def parse_point(text: Optional[str]) -> Optional[list[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--x0 expects comma separated numbers, got '{text}'") from None


def load_system(args: argparse.Namespace) -> SlowFastSystem:
    overrides = parse_params(args.param)
    if args.model is not None:
        system = load_model(args.model)
        return with_params(system, overrides) if overrides else system
    return builtin_system(args.builtin, overrides)


def solver_options(args: argparse.Namespace) -> SolverOptions:
    try:
        return SolverOptions(
            method=args.method,
            adaptive=not args.fixed,
            rtol=args.rtol,
            atol=args.atol,
            max_step=args.max_step,
            fixed_step=args.fixed_step,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_analyze(args: argparse.Namespace) -> int:
    system = load_system(args)
    report = analyze(system, parse_box(args.box) or None, args.grid, equilibria=args.equilibria)
    document = report_to_dict(report)

    if args.out is None:
        sys.stdout.write(dumps(document))
    else:
        dump_dict_to_file(args.out, document)
        logger.info(f"Wrote report to {args.out}")

    return EXIT_NUMERICAL if report.failed else EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    system = load_system(args)
    x0 = parse_point(args.x0)
    if x0 is not None and len(x0) != len(system.variables):
        raise UsageError(f"--x0 needs {len(system.variables)} values {system.variables}, got {len(x0)}")
    if args.t_end < 0.0:
        raise UsageError(f"--t-end must not be negative, got {args.t_end}")

    record = simulate_to_files(
        system,
        Path(args.out),
        x0=x0,
        t_span=(0.0, args.t_end),
        transient=args.transient,
        solver_options=solver_options(args),
        n_samples=args.samples,
        eta=args.eta,
        render=args.render,
        box=parse_box(args.box) or None,
        grid_per_axis=args.grid,
    )
    logger.info(f"Wrote {record['files']['csv']} and {record['files']['plot']}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    system = load_system(args)
    try:
        values = parse_values(args.values)
    except ValueError as e:
        raise UsageError(f"--values: {e}") from e

    result = run_sweep(
        system,
        args.parameter,
        values,
        Path(args.out),
        mode=args.mode,
        box=parse_box(args.box) or None,
        grid_per_axis=args.grid,
        solver_options=solver_options(args),
        t_span=(0.0, args.t_end),
        transient=args.transient,
        n_samples=args.samples,
        eta=args.eta,
        render=args.render,
    )
    print(result.out_dir)
    return EXIT_NUMERICAL if result.info.n_failed > 0 else EXIT_OK


def _add_model_arguments(parser: argparse.ArgumentParser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--builtin", choices=sorted(BUILTIN_MODELS), help="Built-in model")
    source.add_argument("--model", type=Path, help="JSON model file")
    parser.add_argument(
        "--param", action="append", default=[], metavar="NAME=VALUE", help="Override a parameter (repeatable)"
    )
    parser.add_argument(
        "--box", action="append", default=[], metavar="VAR=LO:HI", help="Search interval of a variable (repeatable)"
    )
    parser.add_argument("--grid", type=int, default=10, help="Search seeds per axis (default: 10)")


def _add_solver_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--method", choices=METHODS, default="dopri5")
    parser.add_argument("--fixed", action="store_true", help="Fixed-step integration")
    parser.add_argument("--rtol", type=float, default=1e-9)
    parser.add_argument("--atol", type=float, default=1e-11)
    parser.add_argument("--max-step", type=float, default=1e-2)
    parser.add_argument("--fixed-step", type=float, default=1e-3)
    parser.add_argument("--t-end", type=float, default=100.0, help="End of the integration span")
    parser.add_argument(
        "--transient", type=float, default=20.0, help="Time discarded before recording (automatic x0 only)"
    )
    parser.add_argument("--samples", type=int, default=None, help="Equally spaced output samples")
    parser.add_argument("--eta", type=float, default=0.05, help="Critical manifold proximity for the dwell times")
    parser.add_argument("--render", action="store_true", help="Also render the projections to PNG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canard-lab", description="Canard analysis of slow-fast dynamical systems"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    analyze_parser = sub.add_parser("analyze", help="Pseudo-singular points and both canard verdicts")
    _add_model_arguments(analyze_parser)
    analyze_parser.add_argument("--equilibria", action="store_true", help="Also report the equilibria in the box")
    analyze_parser.add_argument("--out", type=Path, default=None, help="Report file (default: stdout)")
    analyze_parser.set_defaults(func=cmd_analyze)

    simulate_parser = sub.add_parser("simulate", help="Integrate the full system")
    _add_model_arguments(simulate_parser)
    _add_solver_arguments(simulate_parser)
    simulate_parser.add_argument("--x0", default=None, help="Comma separated initial state (default: automatic)")
    simulate_parser.add_argument("--out", default="trajectory", help="Output prefix of the .csv/.plot/.json files")
    simulate_parser.set_defaults(func=cmd_simulate)

    sweep_parser = sub.add_parser("sweep", help="Analyze or simulate over a list of parameter values")
    _add_model_arguments(sweep_parser)
    _add_solver_arguments(sweep_parser)
    sweep_parser.add_argument("--parameter", required=True, help="Parameter to sweep (or epsilon)")
    sweep_parser.add_argument(
        "--values", required=True, help="Comma separated values, start:stop:num expands to a range"
    )
    sweep_parser.add_argument("--mode", choices=MODES, default="analyze")
    sweep_parser.add_argument("--out", default="sweep", help="Output folder")
    sweep_parser.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )

    try:
        return args.func(args)
    except (ModelException, UsageError, ValueError) as e:
        print(f"canard-lab: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationException as e:
        print(f"canard-lab: integration failed: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EvaluationException as e:
        print(f"canard-lab: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
