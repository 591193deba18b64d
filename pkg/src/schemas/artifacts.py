"""
JSON artifact schemas written by the CLI.
Timing fields live only in TimingExport so every other artifact is
reproducible byte for byte.
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class BasisExport(BaseModel):
    """Orthonormal basis: Psi_k = sum_j coeffs[k][j] * xi^order[j]."""
    d: int
    p: int
    order: List[List[int]] = Field(..., description="Exponent vectors in graded-lex order")
    coeffs: List[List[float]] = Field(..., description="Row k holds the monomial coefficients of Psi_k")
    gram_residual: float


class QuadratureExport(BaseModel):
    """Quadrature rule exact for the order-2p basis identified by basis2p_id."""
    d: int
    p: int = Field(..., description="Pipeline order; the rule is exact to degree 2p")
    nodes: List[List[float]]
    weights: List[float]
    residual: float
    basis2p_id: str
    exactness_degree: int
    negative_weights: int = Field(..., description="Number of negative weights (not suppressed)")


class GalerkinExport(BaseModel):
    """Lifted system; row-block j, column-block k of each matrix holds <M Psi_k, Psi_j>."""
    n_x: int
    n_u: int
    n_w: int
    n_basis: int
    A_hat: List[List[float]]
    B_hat: List[List[float]]
    D_hat: Optional[List[List[float]]] = None
    V: List[List[float]]


class SolverStatsExport(BaseModel):
    iterations: int
    outer_iterations: int
    max_violation: float
    violation_history: List[float]


class SolutionExport(BaseModel):
    """Optimized inputs of a run with solver outcome and chance margins (null where inactive)."""
    scenario: str
    mode: str
    p: int
    n_basis: int
    rule_size: int
    status: str
    objective: float
    u_star: List[List[float]]
    margins: List[List[Optional[float]]]
    stats: SolverStatsExport


class TimingExport(BaseModel):
    """Wall-clock seconds per pipeline step."""
    basis_s: float
    quadrature_s: float
    projection_s: float
    lifting_s: float
    solve_s: float
    total_s: float


class McSummaryExport(BaseModel):
    n_samples: int
    wall_time_s: float
    violation_rate: List[float]


class ComparisonExport(BaseModel):
    """Surrogate pipeline versus sample-average MC-MPC on the same scenario."""
    scenario: str
    n_samples: int
    report_step: int
    galerkin_wall_time_s: float
    mc_wall_time_s: float
    speed_ratio: float = Field(..., description="MC-MPC wall time over surrogate pipeline wall time")
    input_difference: float = Field(..., description="Euclidean norm of the input difference")
    galerkin_cost: float = Field(..., description="Sample-average cost of the surrogate inputs")
    mc_cost: float = Field(..., description="Sample-average cost of the MC-MPC inputs")
    ks_distance: Dict[str, float]
    surrogate_violation_rate: List[float]
    mc_violation_rate: List[float]
    mc: McSummaryExport
