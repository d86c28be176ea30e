"""
Command-line entry point: python -m qaoa_control <command> [options]

Exit codes: 0 success, 1 configuration error, 2 run failure, 3 failed verification.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import __version__
from .config import ExperimentConfig
from .exceptions import ConfigError, VerificationError
from .logging_utils import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_VERIFY = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML experiment file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="experiment seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--workers", type=int, help="worker threads / processes")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted configuration override, repeatable (e.g. env.noise.strength=0.1)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qaoa_control", description="Hybrid discrete/continuous quantum control")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="run one algorithm (rl_qaoa, cd_qaoa, pg_qaoa, qaoa, adiabatic)")
    _add_common(train)
    train.add_argument("--algorithm", help="algorithm to run, overrides the configuration")

    _add_common(commands.add_parser("sweep", help="grid over algorithms, noise, sizes and seeds"))
    _add_common(commands.add_parser("adiabatic-scan", help="energy ratio versus protocol duration"))

    evaluate = commands.add_parser("evaluate", help="greedy noise-free evaluation of a checkpoint")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", required=True, help="checkpoint file")

    verify = commands.add_parser("verify", help="property and oracle checks")
    _add_common(verify)
    verify.add_argument("--inject-fault", action="append", default=[], help="deliberately break a component")
    verify.add_argument("--module", action="append", default=[], help="only run checks of this module")

    plot = commands.add_parser("plot", help="render figures of a run directory")
    plot.add_argument("--run-dir", required=True, help="directory holding results or training logs")
    plot.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Configuration file, then --override patches, then the dedicated flags."""
    overrides: List[str] = list(args.override)
    if getattr(args, "algorithm", None):
        overrides.append(f"algorithm={args.algorithm}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out:
        overrides.append(f"output_dir={args.out}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return ExperimentConfig.load(args.config, overrides)


def _dispatch(args: argparse.Namespace) -> None:
    from . import experiments, plotting, verify

    if args.command == "plot":
        for path in plotting.plot_directory(args.run_dir):
            print(path)
        return

    config = load_config(args)
    if args.command == "train":
        summary = experiments.run_algorithm(config)
        print(f"{summary['algorithm']}: best E/E_GS = {summary['best_clean_ratio']:.6f} ({config.output_dir})")
    elif args.command == "sweep":
        results = experiments.run_sweep(config)
        print(results.to_string(index=False))
    elif args.command == "adiabatic-scan":
        print(experiments.run_adiabatic_scan(config).to_string(index=False))
    elif args.command == "evaluate":
        print(json.dumps(experiments.evaluate_checkpoint(args.checkpoint, config), indent=2))
    elif args.command == "verify":
        verify.verify(frozenset(args.inject_fault), args.module or None)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        _dispatch(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except VerificationError as e:
        logger.error(f"Verification failed: {e}")
        return EXIT_VERIFY
    except Exception as e:
        logger.exception(f"Error running {args.command}: {e}")
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
