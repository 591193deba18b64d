"""
Results of the end-to-end surrogate pipeline and of the MC comparison.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from src.models.basis import OrthonormalBasis
from src.models.problem import ClosedLoopRecord, MpcProblem, MpcSolution
from src.models.quadrature import QuadratureRule
from src.models.scenario import McReport, Scenario
from src.models.system import CoeffVector, GalerkinSystem
from src.schemas.enums import RunMode


@dataclass
class PipelineTiming:
    """Wall-clock seconds per pipeline step."""

    basis_s: float = 0.0
    quadrature_s: float = 0.0
    projection_s: float = 0.0
    lifting_s: float = 0.0
    solve_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.basis_s + self.quadrature_s + self.projection_s + self.lifting_s + self.solve_s


@dataclass(frozen=True, eq=False)
class Surrogate:
    """Everything built before the solve: bases, rule, lifted system and lifted data."""

    basis: OrthonormalBasis
    basis2p: OrthonormalBasis
    rule: QuadratureRule
    galerkin: GalerkinSystem
    x_init: CoeffVector
    w_hat: Optional[CoeffVector]


@dataclass(frozen=True, eq=False)
class PipelineResult:
    scenario: Scenario
    mode: RunMode
    p: int
    surrogate: Surrogate
    problem: MpcProblem
    timing: PipelineTiming
    solution: Optional[MpcSolution] = None
    record: Optional[ClosedLoopRecord] = None

    @property
    def states(self) -> Sequence[CoeffVector]:
        """Lifted states of the reported trajectory (open-loop prediction or closed loop)."""
        if self.record is not None:
            return self.record.states
        return self.solution.x_traj

    @property
    def inputs(self) -> np.ndarray:
        if self.record is not None:
            return self.record.inputs
        return self.solution.u_star

    @property
    def final_solution(self) -> MpcSolution:
        """The open-loop solution, or the last solve of a closed-loop run."""
        if self.record is not None:
            return self.record.solutions[-1]
        return self.solution


@dataclass(frozen=True, eq=False)
class Comparison:
    """Surrogate pipeline versus the sample-average MC-MPC baseline."""

    pipeline: PipelineResult
    mc_solution: MpcSolution
    mc_report: McReport
    speed_ratio: float
    input_difference: float
    galerkin_cost: float
    mc_cost: float
    ks_distance: Dict[str, float] = field(default_factory=dict)
    surrogate_violation_rate: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mc_violation_rate: np.ndarray = field(default_factory=lambda: np.zeros(0))
