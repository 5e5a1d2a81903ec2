"""
Command-line front door: habitforge <subcommand> [flags].

Exit status 0 on success, 2 for usage and configuration errors, 1 for any
other toolkit error. Errors are written to stderr as one JSON line.
"""
import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .app import HabitForgeApp
from .config import RunConfig, resolve_config
from .constants import Defaults, Env, ExitCode, Level, Treatment
from .errors import ConfigError, HabitForgeError
from .sinks import DirectorySink, DirectorySource
from .synth import GeneratorSpec

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PACKAGE_DIR = Path(__file__).resolve().parent


# ============================================================================
# PARSER
# ============================================================================
def _common_parser():
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--in", dest="in_dir", help="input directory (default: .)")
    parser.add_argument("--out", dest="out_dir", help="output directory (default: .)")
    parser.add_argument("--seed", type=int, help=f"random seed (default: ${Env.SEED} or {Defaults.SEED})")
    parser.add_argument("--config", dest="config_path", help="TOML config or JSON run manifest")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    return parser


def _add_cluster_flags(parser):
    parser.add_argument("--k", type=int, help=f"number of clusters (default: {Defaults.K})")
    parser.add_argument("--window", type=int, help=f"early window in weeks (default: {Defaults.WINDOW})")
    parser.add_argument("--late-window", type=int,
                        help=f"late window in weeks (default: {Defaults.LATE_WINDOW})")
    parser.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None,
                        help="scale visit vectors to unit sum")


def _add_gap_flags(parser):
    parser.add_argument("--gap-tolerance", type=int,
                        help=f"tolerated single-week gaps (default: {Defaults.GAP_TOLERANCE})")


def _add_weeks_flag(parser):
    parser.add_argument("--weeks", help="inclusive week range a..b")


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="habitforge",
        description="Habit-formation analytics over gym membership cohorts.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    generate = commands.add_parser("generate", parents=[common], help="synthetic cohort with ground truth")
    generate.add_argument("--n", dest="n_members", type=int,
                          help=f"number of members (default: {Defaults.N_MEMBERS})")
    generate.add_argument("--preset", choices=GeneratorSpec.PRESETS,
                          help=f"generator preset (default: {Defaults.PRESET})")

    vectorize = commands.add_parser("vectorize", parents=[common], help="visit matrices")
    _add_cluster_flags(vectorize)

    cluster = commands.add_parser("cluster", parents=[common], help="NMF clusters and transitions")
    _add_cluster_flags(cluster)
    cluster.add_argument("--refit", action=argparse.BooleanOptionalAction, default=None,
                         help="refit components on the late window")
    cluster.add_argument("--max-iters", type=int, help=f"NMF iterations (default: {Defaults.NMF_MAX_ITERS})")
    cluster.add_argument("--tol", type=float, help=f"NMF relative tolerance (default: {Defaults.NMF_TOL})")
    cluster.add_argument("--restarts", type=int,
                         help=f"seeded NMF starts, lowest error kept (default: {Defaults.NMF_RESTARTS})")

    survival = commands.add_parser("survival", parents=[common], help="streaks, CDFs and gap usage")
    _add_gap_flags(survival)

    critical = commands.add_parser("critical", parents=[common], help="critical visit table")
    _add_gap_flags(critical)
    _add_weeks_flag(critical)

    commands.add_parser("deviations", parents=[common], help="demographic deviations per cluster")

    causal = commands.add_parser("causal", parents=[common], help="propensity-matched effects")
    _add_gap_flags(causal)
    _add_weeks_flag(causal)
    causal.add_argument("--treatment", dest="treatments", action="append",
                        choices=Treatment.INTERVENTIONS, help="repeatable (default: all)")
    causal.add_argument("--level", dest="levels", action="append", choices=Level.POSITIVE,
                        help="repeatable (default: all)")
    causal.add_argument("--refute", type=int, help="random-common-cause draws (default: 0)")
    causal.add_argument("--bootstrap", type=int,
                        help=f"bootstrap resamples (default: {Defaults.BOOTSTRAP_RESAMPLES})")
    causal.add_argument("--ridge", type=float, help=f"propensity ridge (default: {Defaults.RIDGE})")
    causal.add_argument("--caliper", type=float, help="maximum score distance of a pair")
    causal.add_argument("--cluster-encoding", choices=Defaults.CLUSTER_ENCODINGS)
    causal.add_argument("--by-cluster", action=argparse.BooleanOptionalAction, default=None)
    causal.add_argument("--self-reported", action=argparse.BooleanOptionalAction, default=None)

    report = commands.add_parser("report", parents=[common], help="figures and summary")
    _add_cluster_flags(report)
    _add_gap_flags(report)
    _add_weeks_flag(report)
    return parser


# ============================================================================
# ERRORS AND LOGGING
# ============================================================================
def error_module(exc):
    """Dotted name of the deepest habitforge module in an exception's traceback."""
    module = __name__
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename).resolve()
        if path.parent == PACKAGE_DIR:
            module = f"{__package__}.{path.stem}"
    return module


def report_error(exc, stream=None):
    stream = sys.stderr if stream is None else stream
    payload = {
        "error": {"module": error_module(exc), "type": type(exc).__name__, "message": str(exc)}
    }
    stream.write(json.dumps(payload, sort_keys=True) + "\n")


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


# ============================================================================
# ENTRY POINT
# ============================================================================
def run(argv=None):
    """
    Parse argv, run the subcommand and return its exit status.

    Args:
        argv: Argument list without the program name (default: sys.argv[1:])
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage or help
        return exc.code if isinstance(exc.code, int) else ExitCode.USAGE
    configure_logging(args.verbose, args.quiet)

    flags = {
        name: value
        for name, value in vars(args).items()
        if name in RunConfig.field_names()
    }
    try:
        config = resolve_config(flags, args.config_path)
        app = HabitForgeApp(config, DirectorySource(config.in_dir), DirectorySink(config.out_dir))
        app.run(args.command)
    except ConfigError as exc:
        report_error(exc)
        return ExitCode.USAGE
    except (HabitForgeError, OSError) as exc:
        logger.debug("Subcommand %s failed", args.command, exc_info=True)
        report_error(exc)
        return ExitCode.ERROR
    return ExitCode.OK


