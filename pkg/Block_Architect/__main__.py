#!/usr/bin/python3

import os
import sys
import time
import logging
import importlib.metadata
from argparse import ArgumentParser, Namespace
from sys import exit, stderr
from typing import List, NoReturn, Optional

from Block_Architect.abstraction_miner import mine
from Block_Architect.config import ConfigError, ExperimentConfig, load_config
from Block_Architect.data_model import LexiconError, render_grid
from Block_Architect.experiment_harness import ExperimentRunner, evaluate, run_replicas
from Block_Architect.grid_env import ConstructionEnv
from Block_Architect.metrics_handler import MalformedFile, MissingRun, read_episode_log, report
from Block_Architect.neural_net import CheckpointError, load_checkpoint
from Block_Architect.shape_catalog import CatalogError, ShapeCatalog, builtin_default, load_catalog
from Block_Architect.utility import ExitCode, Mode, convert_time_unit


def _version() -> str:
    try:
        return importlib.metadata.version("block_architect")
    except importlib.metadata.PackageNotFoundError:
        return "unknown"


class CliParser(ArgumentParser):
    """Usage errors exit with the configuration error code."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(int(ExitCode.CONFIG), f"{self.prog}: error: {message}\n")


def setup_argument_parser() -> ArgumentParser:
    """Set up and return the argument parser with all subcommands."""
    parser = CliParser(
        description='Train an architect agent that learns to instruct a builder on a 6x6 block grid '
                    'and invents abstractions for frequently used message sequences.',
        epilog=f'Block Architect: {_version()}'
    )
    parser.add_argument(
        '-v', '--verbose', dest='verbose', default=0, action='count',
        help="Log phase transitions (-v) or every episode (-vv)"
    )
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help="Run an experiment")
    run_group = train.add_argument_group('Run')
    run_group.add_argument(
        "--config", dest="config", default=None,
        help="Path to a key = value configuration file"
    )
    run_group.add_argument(
        "--mode", dest="mode", default=None, choices=[m.value for m in Mode],
        help="worst: no abstractions; best: preloaded abstractions; full: invent abstractions"
    )
    run_group.add_argument("--seed", dest="seed", default=None, type=int, help="Random seed")
    run_group.add_argument("--out", dest="out", default=None, help="Base output directory")
    run_group.add_argument(
        "--max-epochs", dest="max_epochs", default=None, type=int,
        help="Main-loop epoch limit before the run is reported as DNF"
    )
    run_group.add_argument(
        "--catalog", dest="catalog", default=None,
        help="builtin, builtin_desk or a shape file path"
    )
    run_group.add_argument(
        "--replicas", dest="replicas", default=1, type=int,
        help="Number of independent runs with consecutive seeds, run in parallel"
    )
    run_group.add_argument(
        "--resume", dest="resume", default=None,
        help="Continue a run from its checkpoint.json"
    )
    run_group.add_argument(
        "--quiet", dest="quiet", default=False, action='store_true',
        help="Do not show the progress bar"
    )

    eval_parser = commands.add_parser('eval', help="Greedy evaluation of a checkpoint")
    eval_parser.add_argument("--checkpoint", dest="checkpoint", required=True, help="Checkpoint file")
    eval_parser.add_argument(
        "--shapes", dest="shapes", default=None,
        help="Shape file to evaluate on (default: the built-in catalog)"
    )
    eval_parser.add_argument(
        "--shape", dest="shape", default=None, action='append',
        help="Only evaluate this shape; repeat for several"
    )
    eval_parser.add_argument(
        "--one-per-family", dest="one_per_family", default=False, action='store_true',
        help="Only evaluate the first shape of every family"
    )
    eval_parser.add_argument(
        "--show", dest="show", default=False, action='store_true',
        help="Print the goal of every failed shape"
    )

    mine_parser = commands.add_parser('mine', help="Rank candidate abstractions from an episode log")
    mine_parser.add_argument("--episodes", dest="episodes", required=True, help="episodes.csv of a run")
    mine_parser.add_argument("--min-len", dest="min_len", default=2, type=int, help="Shortest substring")
    mine_parser.add_argument("--max-len", dest="max_len", default=6, type=int, help="Longest substring")
    mine_parser.add_argument(
        "--window", dest="window", default=None, type=int,
        help="Only use the last W episodes of the log"
    )
    mine_parser.add_argument(
        "--min-frequency", dest="min_frequency", default=2, type=int,
        help="Drop substrings found in fewer episodes"
    )
    mine_parser.add_argument("--top", dest="top", default=10, type=int, help="Number of candidates to print")

    report_parser = commands.add_parser('report', help="Summarize a run directory")
    report_parser.add_argument("--run", dest="run", required=True, help="Run directory")
    report_parser.add_argument(
        "--bucket", dest="bucket", default=10_000, type=int,
        help="Epochs per success-rate bucket"
    )
    return parser


def validate_args(args: Namespace) -> None:
    """
    Validate command line arguments before any work starts.

    Raises:
        ConfigError: If a value is out of range or options conflict
        FileNotFoundError: If a named config or checkpoint file does not exist
    """
    if args.command == 'train':
        if args.replicas < 1:
            raise ConfigError("--replicas must be at least 1.")
        if args.resume is not None:
            if args.replicas != 1:
                raise ConfigError("--resume continues a single run and cannot be combined with --replicas.")
            if not os.path.isfile(args.resume):
                raise FileNotFoundError(f"Checkpoint file not found: {args.resume}")
        if args.config is not None and not os.path.isfile(args.config):
            raise FileNotFoundError(f"Config file not found: {args.config}")
        if args.max_epochs is not None and args.max_epochs < 1:
            raise ConfigError("--max-epochs must be positive.")
    elif args.command == 'mine':
        if not 2 <= args.min_len <= args.max_len:
            raise ConfigError("--min-len and --max-len must satisfy 2 <= min <= max.")
        if args.window is not None and args.window < 1:
            raise ConfigError("--window must be positive.")
    elif args.command == 'report' and args.bucket < 1:
        raise ConfigError("--bucket must be positive.")


def setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def build_config(args: Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.replace(
        mode=Mode(args.mode) if args.mode else None,
        seed=args.seed,
        out=args.out,
        max_epochs=args.max_epochs,
        catalog=args.catalog
    )


def run_train(args: Namespace) -> ExitCode:
    start = time.time()
    if args.resume:
        runner = ExperimentRunner.resume(args.resume, progress=not args.quiet)
        try:
            summaries = [runner.run()]
        finally:
            runner.close()
    else:
        config = build_config(args)
        if args.replicas == 1:
            runner = ExperimentRunner(config, progress=not args.quiet)
            try:
                summaries = [runner.run()]
            finally:
                runner.close()
        else:
            print(f"Launching {args.replicas} replicas with seeds {config.seed}..{config.seed + args.replicas - 1}")
            summaries = run_replicas(config, args.replicas)
    for summary in summaries:
        abstractions = ", ".join(summary.lexicon.describe(m.id) for m in summary.lexicon.abstractions())
        print(f"[{summary.mode} seed {summary.seed}] {summary.outcome}")
        print(f"    Lexicon: {abstractions or 'primitives only'}")
        print(f"    Run directory: {summary.run_dir}")
    print(f"Finished in {convert_time_unit(time.time() - start)}")
    return ExitCode.OK


def run_eval(args: Namespace) -> ExitCode:
    net, lexicon = load_checkpoint(args.checkpoint)
    catalog = load_catalog(args.shapes) if args.shapes else builtin_default()
    if args.one_per_family:
        catalog = catalog.one_per_family()
    if args.shape:
        unknown = [name for name in args.shape if catalog.get(name) is None]
        if unknown:
            raise CatalogError(f"No shape named {', '.join(unknown)} in the {catalog.source} catalog")
        catalog = ShapeCatalog([catalog.get(name) for name in args.shape], catalog.source)
    results = evaluate(net, lexicon, catalog, ConstructionEnv())
    for shape in catalog:
        print(f"{shape.name:<20} {'ok' if results[shape.name] else 'FAIL'}")
        if args.show and not results[shape.name]:
            for row in render_grid(shape.goal):
                print(f"    {row}")
    print(f"{sum(results.values())}/{len(results)} shapes built")
    return ExitCode.OK


def run_mine(args: Namespace) -> ExitCode:
    sequences: List = read_episode_log(args.episodes)
    if args.window is not None:
        sequences = sequences[-args.window:]
    candidates = mine(sequences, args.min_len, args.max_len, min_frequency=args.min_frequency)
    print(f"{len(candidates)} candidates from {len(sequences)} episodes")
    for rank, candidate in enumerate(candidates[:args.top], start=1):
        print(f"{rank:>3}. {candidate.describe()}")
    return ExitCode.OK


def run_report(args: Namespace) -> ExitCode:
    print(report(args.run, args.bucket), end="")
    return ExitCode.OK


COMMANDS = {
    'train': run_train,
    'eval': run_eval,
    'mine': run_mine,
    'report': run_report
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run the Block Architect CLI."""
    parser = setup_argument_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        validate_args(args)
        return int(COMMANDS[args.command](args))
    except (ConfigError, CatalogError, CheckpointError, LexiconError, MalformedFile) as e:
        print(f"Error: {e}")
        return int(ExitCode.CONFIG)
    except (OSError, MissingRun) as e:
        print(f"I/O error: {e}")
        return int(ExitCode.IO)


if __name__ == "__main__":
    exit(main())
