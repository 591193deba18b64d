"""
Benchmark scenario and Monte Carlo report models.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from src.models.mixture import GaussianMixture
from src.models.problem import AffineConstraint
from src.models.system import PolyMatrix, StochasticLTI
from src.schemas.enums import DiscretizationMethod, ReferenceKind


@dataclass(frozen=True, eq=False)
class Reference:
    """Output reference y_ref(t) for tracking objectives (t in seconds)."""

    kind: ReferenceKind
    value: np.ndarray                 # constant / step target
    radius: float = 2.0
    rate: float = 0.2
    climb: float = 0.2

    def at(self, times: np.ndarray) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.kind is ReferenceKind.HELIX:
            return np.column_stack([
                self.radius * np.cos(self.rate * times),
                self.radius * np.sin(self.rate * times),
                self.climb * times,
            ])
        return np.tile(self.value, (times.size, 1))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    Problem data stated in terms of xi, before lifting onto a basis.

    Q and R are stage weights applied at every step.
    """

    horizon: int
    Q: np.ndarray
    R: np.ndarray
    x_init: PolyMatrix                # (n_x, 1) polynomial initial state
    u_lower: np.ndarray
    u_upper: np.ndarray
    constraints: Tuple[AffineConstraint, ...] = ()
    C: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    reference: Optional[Reference] = None


@dataclass(frozen=True)
class Discretization:
    method: DiscretizationMethod
    dt: float


@dataclass(frozen=True, eq=False)
class Scenario:
    """A benchmark: uncertain system, parameter distribution and control problem."""

    name: str
    system: StochasticLTI
    mixture: GaussianMixture
    problem: ProblemSpec
    dt: float = 1.0
    discretization: Optional[Discretization] = None
    steps: int = 1                    # closed-loop steps for receding-horizon runs
    report_step: int = 0              # step whose distribution is compared against MC
    u_eq: Optional[np.ndarray] = None
    state_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.system.d != self.mixture.dimension:
            raise ValueError(
                f"System depends on {self.system.d} parameters, mixture has {self.mixture.dimension}"
            )
        if self.problem.Q.shape != (self.system.n_x, self.system.n_x):
            raise ValueError("Stage weight Q does not match the state dimension")
        if self.problem.R.shape != (self.system.n_u, self.system.n_u):
            raise ValueError("Stage weight R does not match the input dimension")
        if self.problem.x_init.shape != (self.system.n_x, 1):
            raise ValueError("Initial condition does not match the state dimension")


@dataclass(frozen=True, eq=False)
class McReport:
    """Sample statistics of simulated trajectories."""

    n_samples: int
    mean: np.ndarray                  # (T+1, n_x)
    std: np.ndarray                   # (T+1, n_x)
    violation_by_time: np.ndarray     # (n_constraints, T+1), NaN where inactive
    wall_time: float
    state_samples: np.ndarray         # (T+1, n, n_x)
    ks_distance: Dict[int, float] = field(default_factory=dict)

    @property
    def violation_rate(self) -> np.ndarray:
        """Worst per-step violation frequency of each constraint."""
        if self.violation_by_time.size == 0:
            return np.zeros(self.violation_by_time.shape[0])
        rates = np.where(np.isnan(self.violation_by_time), 0.0, self.violation_by_time)
        return rates.max(axis=1)
