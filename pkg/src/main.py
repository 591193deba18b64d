"""
Command-line entry point.
Configures logging, dispatches subcommands and maps domain errors to exit codes.
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from src.commands import compare, emit, run, validate
from src.config import settings
from src.errors import EXIT_CONFIG, SmpcError
from src.schemas.common import ErrorDetail, ErrorResponse

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgmpc",
        description="Chance-constrained stochastic MPC via stochastic Galerkin projection",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    run.register(subparsers)
    compare.register(subparsers)
    emit.register(subparsers)
    validate.register(subparsers)
    return parser


def configure_logging() -> None:
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _report_error(code: str, message: str, field: Optional[str], reason: str) -> None:
    body = ErrorResponse(
        error={
            "code": code,
            "message": message,
            "details": ErrorDetail(field=field, reason=reason).model_dump(),
        }
    )
    print(body.model_dump_json(indent=2), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 for configuration errors, 2 for numerical failures
        (quadrature generation included), 3 when the solver cannot satisfy
        the chance constraints
    """
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except SmpcError as exc:
        logger.error(f"{args.command} failed: {exc.message}")
        _report_error(exc.code, exc.message, exc.field, type(exc).__name__)
        return exc.exit_code
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        _report_error("VALIDATION_ERROR", first["msg"], location or None, "ValidationError")
        return EXIT_CONFIG
    except ValueError as exc:
        _report_error("VALIDATION_ERROR", str(exc), None, type(exc).__name__)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
