"""
Quadrature rule and generation settings for the correlated parameter measure.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from src.config import settings


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """
    Nodes and weights that integrate the order-`exactness_degree` basis exactly.

    residual is ||Phi(nodes) w - e_1||_2 against the basis named by basis2p_id.
    """

    nodes: np.ndarray         # (M, d)
    weights: np.ndarray       # (M,)
    residual: float
    basis2p_id: str
    exactness_degree: int

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d(self) -> int:
        return int(self.nodes.shape[1])

    @property
    def negative_weights(self) -> int:
        """Number of negative weights; the least-squares fit leaves their sign free."""
        return int(np.count_nonzero(self.weights < 0.0))

    def with_values(self, nodes: np.ndarray, weights: np.ndarray, residual: float) -> "QuadratureRule":
        return replace(self, nodes=nodes, weights=weights, residual=float(residual))


@dataclass(frozen=True)
class QuadConfig:
    """Settings for `quadrature_service.generate`."""

    m_init: Optional[int] = None          # None -> 3 * N_2p
    exactness_tol: float = settings.exactness_tol
    polish_tol: float = 1e-14             # final rule is refined below exactness_tol until here or a stall
    bcd_max_iters: int = settings.bcd_max_iters
    reduction_max_iters: int = 100        # refinement budget of each merged candidate
    inner_ls_tol: float = 1e-12           # rcond of the weight solve and minimum LM step
    reduction_enabled: bool = True
    seed: int = 0
    stall_patience: int = 20
    stall_rtol: float = 1e-6

    def __post_init__(self):
        if self.exactness_tol <= 0 or self.inner_ls_tol <= 0 or self.polish_tol <= 0:
            raise ValueError("Quadrature tolerances must be positive")
        if self.bcd_max_iters < 1 or self.reduction_max_iters < 1:
            raise ValueError("Iteration budgets must be at least 1")
        if self.m_init is not None and self.m_init < 1:
            raise ValueError("m_init must be at least 1")
