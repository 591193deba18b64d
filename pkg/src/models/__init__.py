"""
Models package - immutable domain objects shared by the services.
"""
from src.models.mixture import GaussianMixture, MultiIndex, SampleBatch
from src.models.basis import MonomialOrder, OrthonormalBasis
from src.models.quadrature import QuadConfig, QuadratureRule
from src.models.system import CoeffVector, GalerkinSystem, ParametricMatrix, PolyMatrix, StochasticLTI
from src.models.problem import (
    AffineConstraint,
    ClosedLoopRecord,
    MpcProblem,
    MpcSolution,
    SolverSettings,
    SolverStats,
    Tracking,
)
from src.models.scenario import Discretization, McReport, ProblemSpec, Reference, Scenario
from src.models.pipeline import Comparison, PipelineResult, PipelineTiming, Surrogate

__all__ = [
    "GaussianMixture",
    "MultiIndex",
    "SampleBatch",
    "MonomialOrder",
    "OrthonormalBasis",
    "QuadConfig",
    "QuadratureRule",
    "CoeffVector",
    "GalerkinSystem",
    "ParametricMatrix",
    "PolyMatrix",
    "StochasticLTI",
    "AffineConstraint",
    "ClosedLoopRecord",
    "MpcProblem",
    "MpcSolution",
    "SolverSettings",
    "SolverStats",
    "Tracking",
    "Discretization",
    "McReport",
    "ProblemSpec",
    "Reference",
    "Scenario",
    "Comparison",
    "PipelineResult",
    "PipelineTiming",
    "Surrogate",
]
