"""
`compare-mc` subcommand: surrogate pipeline against sample-average MC-MPC.
"""
import argparse
import logging

from src.commands import add_config_arguments, add_output_argument, load_scenario, resolve_output_dir
from src.errors import ConfigError
from src.services import export_service, pipeline_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "compare-mc",
        help="Compare the surrogate pipeline with the Monte Carlo MPC baseline",
    )
    add_config_arguments(parser)
    add_output_argument(parser)
    parser.add_argument(
        "--samples",
        type=int,
        default=None,
        help="Number of Monte Carlo samples (default: run.mc_samples)",
    )
    parser.set_defaults(handler=cmd_compare_mc)


def cmd_compare_mc(args: argparse.Namespace) -> int:
    """Write the run artifacts plus comparison.json and mc_trajectory.csv."""
    cfg, scenario = load_scenario(args)
    n = args.samples if args.samples is not None else cfg.run.mc_samples
    if n < 2:
        raise ConfigError(f"Monte Carlo comparison needs at least 2 samples, got {n}", field="samples")

    comparison = pipeline_service.compare_with_mc(scenario, cfg.run, n)
    output_dir = resolve_output_dir(args, cfg)
    export_service.write_comparison_artifacts(comparison, output_dir)
    print(
        f"{scenario.name}: speed ratio {comparison.speed_ratio:.2f}, "
        f"input difference {comparison.input_difference:.3e}, artifacts in {output_dir}"
    )
    return 0
