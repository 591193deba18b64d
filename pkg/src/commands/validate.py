"""
`validate` subcommand: schema and consistency check of a config.
"""
import argparse
import logging

from src.commands import add_config_arguments, load_scenario

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("validate", help="Check a scenario config without running anything")
    add_config_arguments(parser)
    parser.set_defaults(handler=cmd_validate)


def cmd_validate(args: argparse.Namespace) -> int:
    cfg, scenario = load_scenario(args)
    system = scenario.system
    print(
        f"{scenario.name}: valid (n_x={system.n_x}, n_u={system.n_u}, d={system.d}, "
        f"constraints={len(scenario.problem.constraints)}, p={cfg.run.p}, horizon={cfg.run.horizon})"
    )
    return 0
