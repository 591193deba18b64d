"""
CLI subcommand handlers.
Each module registers its subparser and a handler returning an exit code.
"""
import argparse
import logging
from pathlib import Path
from typing import Tuple

from src.config import settings
from src.models.scenario import Scenario
from src.schemas.scenario import ScenarioConfig
from src.services import scenario_service

logger = logging.getLogger(__name__)


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Arguments shared by every subcommand that reads a scenario config."""
    parser.add_argument("config", help="Path to a scenario TOML file or a packaged scenario name")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config entry by dotted key; VALUE is a TOML literal (repeatable)",
    )


def add_output_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--output-dir",
        type=Path,
        default=None,
        help="Directory for artifacts (default: run.output_dir, then SGMPC_OUTPUT_DIR)",
    )


def load_scenario(args: argparse.Namespace) -> Tuple[ScenarioConfig, Scenario]:
    """Validated config and the scenario built from it."""
    cfg = scenario_service.load_config(args.config, args.overrides)
    return cfg, scenario_service.build_scenario(cfg)


def resolve_output_dir(args: argparse.Namespace, cfg: ScenarioConfig) -> Path:
    if getattr(args, "output_dir", None) is not None:
        return args.output_dir
    if cfg.run.output_dir is not None:
        return cfg.run.output_dir
    return settings.output_dir
