"""
Surrogate MPC problem, its solution and closed-loop records.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.config import settings
from src.errors import DimensionMismatch
from src.models.system import CoeffVector
from src.schemas.enums import SolveStatus


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """
    Chance constraint Pr[a^T x_t + b <= 0] >= beta at the listed time indices.

    active_times=None means every predicted step t = 1..T.
    """

    a: np.ndarray
    b: float
    beta: float
    active_times: Optional[Tuple[int, ...]] = None
    name: str = ""

    def __post_init__(self):
        if not 0.5 < self.beta < 1.0:
            raise ValueError(f"Confidence level must lie in (0.5, 1), got {self.beta}")
        if not np.any(self.a):
            raise ValueError("Constraint normal must be nonzero")

    @property
    def kappa(self) -> float:
        """One-sided Chebyshev multiplier sqrt(beta / (1 - beta))."""
        return float(np.sqrt(self.beta / (1.0 - self.beta)))

    @property
    def scale(self) -> float:
        """Normalization applied to margins before the feasibility test."""
        return 1.0 / max(1.0, float(np.linalg.norm(self.a)))

    def is_active(self, t: int) -> bool:
        return self.active_times is None or t in self.active_times


@dataclass(frozen=True, eq=False)
class Tracking:
    """Output tracking term (C x_t - y_ref_t)^T S (C x_t - y_ref_t), one reference row per step."""

    C: np.ndarray       # (n_y, n_x)
    S: np.ndarray       # (n_y, n_y)
    y_ref: np.ndarray   # (T, n_y), row t-1 is the reference at step t

    def __post_init__(self):
        if self.S.shape != (self.C.shape[0], self.C.shape[0]):
            raise DimensionMismatch(f"S must be {self.C.shape[0]}x{self.C.shape[0]}")
        if self.y_ref.ndim != 2 or self.y_ref.shape[1] != self.C.shape[0]:
            raise DimensionMismatch("Reference rows must match the output dimension")
        if np.linalg.eigvalsh(0.5 * (self.S + self.S.T)).min() < -1e-10:
            raise ValueError("Tracking weight S must be positive semi-definite")


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """
    Finite-horizon surrogate problem over deterministic inputs u_0..u_{T-1}.

    Q[t-1] and R[t-1] weight x_t and u_{t-1}; bounds may be infinite.
    """

    T: int
    Q: np.ndarray                 # (T, n_x, n_x)
    R: np.ndarray                 # (T, n_u, n_u)
    x_init: CoeffVector
    u_lower: np.ndarray           # (n_u,)
    u_upper: np.ndarray           # (n_u,)
    constraints: Tuple[AffineConstraint, ...] = ()
    tracking: Optional[Tracking] = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("Horizon must be at least one step")
        if self.Q.shape[0] != self.T or self.R.shape[0] != self.T:
            raise DimensionMismatch("Q and R must provide one matrix per step")
        if self.Q.shape[1:] != (self.n_x, self.n_x):
            raise DimensionMismatch(f"Q must be {self.n_x}x{self.n_x}")
        for name, stack in (("Q", self.Q), ("R", self.R)):
            for mat in stack:
                if not np.allclose(mat, mat.T, atol=1e-12):
                    raise ValueError(f"{name} must be symmetric")
                try:
                    np.linalg.cholesky(mat)
                except np.linalg.LinAlgError:
                    raise ValueError(f"{name} must be positive definite")
        if self.u_lower.shape != (self.n_u,) or self.u_upper.shape != (self.n_u,):
            raise DimensionMismatch("Input bounds must have one entry per channel")
        if np.any(self.u_lower > self.u_upper):
            raise ValueError("Input lower bounds exceed upper bounds")
        for con in self.constraints:
            if con.a.shape != (self.n_x,):
                raise DimensionMismatch(f"Constraint '{con.name}' normal must have length {self.n_x}")
        if self.tracking is not None:
            if self.tracking.C.shape[1] != self.n_x:
                raise DimensionMismatch("Tracking output map must act on the state")
            if self.tracking.y_ref.shape[0] != self.T:
                raise DimensionMismatch("Tracking reference must provide one row per step")

    @property
    def n_x(self) -> int:
        return self.x_init.base_dim

    @property
    def n_u(self) -> int:
        return int(self.R.shape[1])


@dataclass(frozen=True)
class SolverSettings:
    """Augmented-Lagrangian settings."""

    max_outer: int = 40
    max_inner: int = 5000
    feasibility_tol: float = settings.feasibility_tol
    rho_init: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    inner_gtol: float = 1e-10
    multiplier_rtol: float = 1e-6


@dataclass
class SolverStats:
    iterations: int = 0
    outer_iterations: int = 0
    max_violation: float = 0.0
    runtime_s: float = 0.0
    violation_history: List[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class MpcSolution:
    """Optimized inputs and the lifted trajectory they produce."""

    u_star: np.ndarray                # (T, n_u)
    x_traj: Tuple[CoeffVector, ...]   # x_hat_0 .. x_hat_T
    objective: float
    stats: SolverStats
    status: SolveStatus
    margins: np.ndarray               # (n_constraints, T), NaN where inactive


@dataclass(frozen=True, eq=False)
class ClosedLoopRecord:
    """Receding-horizon run: lifted states x_hat_0..x_hat_steps, applied inputs and per-step solves."""

    states: Tuple[CoeffVector, ...]
    inputs: np.ndarray                # (steps, n_u)
    solutions: Tuple[MpcSolution, ...]
