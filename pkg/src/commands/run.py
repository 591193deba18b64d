"""
`run` subcommand: the surrogate pipeline end to end.
"""
import argparse
import logging

from src.commands import add_config_arguments, add_output_argument, load_scenario, resolve_output_dir
from src.services import export_service, pipeline_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "run",
        help="Build basis, quadrature and lifted system, then solve the surrogate program",
    )
    add_config_arguments(parser)
    add_output_argument(parser)
    parser.set_defaults(handler=cmd_run)


def cmd_run(args: argparse.Namespace) -> int:
    """
    Run the pipeline and write trajectory.csv, solution.json and timing.json.

    Returns:
        0 on success; domain errors propagate to the entry point
    """
    cfg, scenario = load_scenario(args)
    result = pipeline_service.run_pipeline(scenario, cfg.run)
    output_dir = resolve_output_dir(args, cfg)
    export_service.write_run_artifacts(result, output_dir)

    solution = result.final_solution
    print(
        f"{scenario.name}: {solution.status.value}, objective {solution.objective:.6g}, "
        f"artifacts in {output_dir}"
    )
    return 0
