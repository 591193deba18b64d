"""
`emit-basis`, `emit-quadrature` and `emit-galerkin` subcommands.
"""
import argparse
import logging

from src.commands import add_config_arguments, add_output_argument, load_scenario, resolve_output_dir
from src.models.quadrature import QuadConfig
from src.schemas.enums import EmitTarget
from src.services import export_service, pipeline_service
from src.services.basis_service import gram_schmidt
from src.services.quadrature_service import generate
from src.services.uncertainty_service import moment_oracle

logger = logging.getLogger(__name__)

HELP = {
    EmitTarget.BASIS: "Write the orthonormal basis of order p as JSON",
    EmitTarget.QUADRATURE: "Write the quadrature rule exact to degree 2p as JSON",
    EmitTarget.GALERKIN: "Write the lifted system matrices and Gramian as JSON",
}


def register(subparsers) -> None:
    for target in EmitTarget:
        parser = subparsers.add_parser(f"emit-{target.value}", help=HELP[target])
        add_config_arguments(parser)
        add_output_argument(parser)
        parser.set_defaults(handler=cmd_emit, target=target)


def cmd_emit(args: argparse.Namespace) -> int:
    """Build only as much of the pipeline as the target needs and write <target>.json."""
    cfg, scenario = load_scenario(args)
    run = cfg.run
    path = resolve_output_dir(args, cfg) / f"{args.target.value}.json"
    mixture = scenario.mixture

    if args.target is EmitTarget.BASIS:
        basis = gram_schmidt(moment_oracle(mixture, run.p), mixture.dimension, run.p)
        export_service.write_basis(basis, path)
    elif args.target is EmitTarget.QUADRATURE:
        basis2p = gram_schmidt(moment_oracle(mixture, run.p), mixture.dimension, 2 * run.p)
        rule = generate(mixture, basis2p, QuadConfig(seed=run.quadrature_seed))
        export_service.write_rule(rule, path)
    else:
        surrogate = pipeline_service.build_surrogate(scenario, run.p, QuadConfig(seed=run.quadrature_seed))
        export_service.write_galerkin(surrogate.galerkin, path)

    print(f"{scenario.name}: wrote {path}")
    return 0
