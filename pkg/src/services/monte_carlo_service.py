"""
Monte Carlo service layer.
Simulates the true parameter-dependent system over sampled parameters,
solves the sample-average MPC baseline and compares distributions.
"""
import logging
import time
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import ks_2samp

from src.errors import DimensionMismatch, InfeasibleProblem
from src.models.basis import OrthonormalBasis
from src.models.mixture import GaussianMixture
from src.models.problem import AffineConstraint, MpcProblem, MpcSolution, SolverSettings
from src.models.scenario import McReport, Scenario
from src.models.system import CoeffVector, ParametricMatrix, StochasticLTI
from src.schemas.enums import SolveStatus
from src.services.galerkin_service import sample_surrogate
from src.services.smpc_service import EPS_SMOOTH, augmented_lagrangian, build_problem
from src.services.uncertainty_service import sample

logger = logging.getLogger(__name__)

InitialState = Union[ParametricMatrix, Callable[[np.ndarray], np.ndarray], np.ndarray]


def _initial_states(x_init: InitialState, points: np.ndarray, n_x: int) -> np.ndarray:
    if isinstance(x_init, ParametricMatrix):
        return x_init.evaluate_batch(points).reshape(points.shape[0], n_x)
    if callable(x_init):
        return np.stack([np.asarray(x_init(xi), dtype=float).reshape(n_x) for xi in points])
    return np.tile(np.asarray(x_init, dtype=float).reshape(1, n_x), (points.shape[0], 1))


def _drift(sys: StochasticLTI, points: np.ndarray) -> np.ndarray:
    if sys.D is None:
        return np.zeros((points.shape[0], sys.n_x))
    return np.einsum("nij,nj->ni", sys.D.evaluate_batch(points), sys.omega.evaluate_batch(points)[:, :, 0])


def simulate_samples(
    sys: StochasticLTI,
    points: np.ndarray,
    x_init: InitialState,
    u: np.ndarray,
) -> np.ndarray:
    """
    x_{t+1} = A(xi) x_t + B(xi) u_t + D(xi) omega(xi) for every sampled xi.

    Returns:
        (T+1, n, n_x) state samples
    """
    u = np.asarray(u, dtype=float).reshape(-1, sys.n_u)
    A = sys.A.evaluate_batch(points)
    B = sys.B.evaluate_batch(points)
    drift = _drift(sys, points)
    x = _initial_states(x_init, points, sys.n_x)
    states = [x]
    for t in range(u.shape[0]):
        x = np.einsum("nij,nj->ni", A, x) + np.einsum("nij,j->ni", B, u[t]) + drift
        states.append(x)
    return np.stack(states)


def violation_by_time(
    states: np.ndarray,
    constraints: Sequence[AffineConstraint],
) -> np.ndarray:
    """Fraction of samples with a^T x_t + b > 0, shape (n_constraints, T+1), NaN where inactive."""
    horizon = states.shape[0] - 1
    rates = np.full((len(constraints), horizon + 1), np.nan)
    for ci, con in enumerate(constraints):
        for t in range(1, horizon + 1):
            if con.is_active(t):
                rates[ci, t] = float(np.mean(states[t] @ con.a + con.b > 0.0))
    return rates


def _report(states: np.ndarray, constraints: Sequence[AffineConstraint], wall_time: float) -> McReport:
    return McReport(
        n_samples=states.shape[1],
        mean=states.mean(axis=1),
        std=states.std(axis=1, ddof=1),
        violation_by_time=violation_by_time(states, constraints),
        wall_time=wall_time,
        state_samples=states,
    )


def mc_propagate(
    sys: StochasticLTI,
    mixture: GaussianMixture,
    x_init: InitialState,
    u: np.ndarray,
    n: int,
    seed: int,
    constraints: Sequence[AffineConstraint] = (),
) -> McReport:
    """
    Propagate sampled parameters through the true system under a fixed input sequence.

    Args:
        sys: Parameter-dependent system
        mixture: Parameter distribution
        x_init: Initial state as a polynomial vector, a callable of xi, or a fixed vector
        u: (T, n_u) inputs
        n: Number of samples (>= 2)
        seed: Sampling seed
        constraints: Constraints whose empirical violation rates are reported

    Raises:
        ValueError: If n < 2
    """
    if n < 2:
        raise ValueError(f"Monte Carlo propagation needs at least 2 samples, got {n}")
    if sys.d != mixture.dimension:
        raise DimensionMismatch(f"System has d={sys.d}, mixture d={mixture.dimension}")
    started = time.perf_counter()
    points = sample(mixture, n, seed).points
    states = simulate_samples(sys, points, x_init, u)
    report = _report(states, constraints, time.perf_counter() - started)
    logger.info(f"MC propagation n={n} T={states.shape[0] - 1} in {report.wall_time:.3f}s")
    return report


def surrogate_samples(
    x_traj: Sequence[CoeffVector],
    basis: OrthonormalBasis,
    points: np.ndarray,
) -> np.ndarray:
    """Evaluate each lifted state of a trajectory at the points; shape (T+1, n, n_x)."""
    return np.stack([sample_surrogate(x_hat, basis, points) for x_hat in x_traj])


def surrogate_violation_rates(
    solution: MpcSolution,
    constraints: Sequence[AffineConstraint],
    basis: OrthonormalBasis,
    mixture: GaussianMixture,
    n: int,
    seed: int,
) -> np.ndarray:
    """
    Empirical violation frequency of each constraint under the surrogate expansion.

    Returns:
        (n_constraints, T) array; column t-1 is step t, NaN where inactive
    """
    points = sample(mixture, n, seed).points
    states = surrogate_samples(solution.x_traj, basis, points)
    return violation_by_time(states, constraints)[:, 1:]


def compare_pdf(surrogate: np.ndarray, reference: np.ndarray, resolution: float = 0.0) -> float:
    """
    Two-sample Kolmogorov-Smirnov statistic between two sample vectors.

    Args:
        surrogate: First sample vector
        reference: Second sample vector
        resolution: When positive, both vectors are first rounded to multiples
            of it, so point masses that differ only by round-off coincide

    Raises:
        ValueError: If either vector is empty
    """
    surrogate = np.ravel(np.asarray(surrogate, dtype=float))
    reference = np.ravel(np.asarray(reference, dtype=float))
    if surrogate.size == 0 or reference.size == 0:
        raise ValueError("Both sample vectors must be nonempty")
    if resolution > 0.0:
        surrogate = np.round(surrogate / resolution) * resolution
        reference = np.round(reference / resolution) * resolution
    return float(ks_2samp(surrogate, reference).statistic)


class SampledProblem:
    """
    Sample-average approximation of the chance-constrained program.

    Every evaluation simulates all samples: the objective is the sample mean of
    the quadratic cost and each chance constraint uses the sample mean and
    standard deviation of g(x_t).
    """

    def __init__(self, sys: StochasticLTI, points: np.ndarray, x_init: InitialState, prob: MpcProblem):
        self.prob = prob
        self.A = sys.A.evaluate_batch(points)
        self.B = sys.B.evaluate_batch(points)
        self.drift = _drift(sys, points)
        self.x0 = _initial_states(x_init, points, sys.n_x)
        self.n_samples = points.shape[0]
        self.n_u = sys.n_u
        self.lower = np.tile(prob.u_lower, prob.T)
        self.upper = np.tile(prob.u_upper, prob.T)
        self.rows = [
            (ci, t) for ci, con in enumerate(prob.constraints) for t in range(1, prob.T + 1) if con.is_active(t)
        ]

        stage, linear, offset = [], [], []
        for t in range(prob.T):
            P, q, k = prob.Q[t], np.zeros(sys.n_x), 0.0
            if prob.tracking is not None:
                tr = prob.tracking
                P = P + tr.C.T @ tr.S @ tr.C
                q = tr.C.T @ tr.S @ tr.y_ref[t]
                k = float(tr.y_ref[t] @ tr.S @ tr.y_ref[t])
            stage.append(P)
            linear.append(q)
            offset.append(k)
        self.stage = np.array(stage)
        self.linear = np.array(linear)
        self.offset = float(np.sum(offset))
        self._scale = 1.0
        self._scale = max(1.0, abs(self.objective(self.initial_guess())))

    @property
    def n_constraints(self) -> int:
        return len(self.rows)

    def initial_guess(self) -> np.ndarray:
        return np.clip(np.zeros(self.prob.T * self.n_u), self.lower, self.upper)

    def simulate(self, u: np.ndarray) -> np.ndarray:
        """State samples x_0..x_T, shape (T+1, n, n_x)."""
        u = u.reshape(self.prob.T, self.n_u)
        x = self.x0
        states = [x]
        for t in range(self.prob.T):
            x = np.einsum("nij,nj->ni", self.A, x) + np.einsum("nij,j->ni", self.B, u[t]) + self.drift
            states.append(x)
        return np.stack(states)

    def objective(self, u: np.ndarray) -> float:
        X = self.simulate(u)[1:]
        quadratic = np.einsum("tni,tij,tnj->", X, self.stage, X) / self.n_samples
        cross = 2.0 * np.einsum("tni,ti->", X, self.linear) / self.n_samples
        inputs = u.reshape(self.prob.T, self.n_u)
        effort = np.einsum("ti,tij,tj->", inputs, self.prob.R, inputs)
        return float(quadratic - cross + self.offset + effort)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        X = self.simulate(u)
        inputs = u.reshape(self.prob.T, self.n_u)
        grad = np.zeros((self.prob.T, self.n_u))
        costate = np.zeros_like(self.x0)
        for t in range(self.prob.T, 0, -1):
            local = 2.0 * (X[t] @ self.stage[t - 1] - self.linear[t - 1]) / self.n_samples
            costate = local + np.einsum("nji,nj->ni", self.A, costate)
            grad[t - 1] = np.einsum("nji,nj->i", self.B, costate) + 2.0 * self.prob.R[t - 1] @ inputs[t - 1]
        return grad.reshape(-1)

    def merit(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.objective(u) / self._scale, self.gradient(u) / self._scale

    def _constraint_values(self, X: np.ndarray) -> np.ndarray:
        return np.stack([X[t] @ self.prob.constraints[ci].a + self.prob.constraints[ci].b for ci, t in self.rows])

    def margins(self, u: np.ndarray) -> np.ndarray:
        if not self.rows:
            return np.zeros(0)
        g = self._constraint_values(self.simulate(u))
        kappas = np.array([self.prob.constraints[ci].kappa for ci, _ in self.rows])
        return g.mean(axis=1) + kappas * np.sqrt(g.var(axis=1) + EPS_SMOOTH)

    def margins_jac(self, u: np.ndarray) -> np.ndarray:
        n_dec = self.prob.T * self.n_u
        if not self.rows:
            return np.zeros((0, n_dec))
        g = self._constraint_values(self.simulate(u))
        jac = np.zeros((len(self.rows), n_dec))
        for r, (ci, t) in enumerate(self.rows):
            con = self.prob.constraints[ci]
            sens = np.zeros((self.n_samples, self.prob.T, self.n_u))
            costate = np.tile(con.a, (self.n_samples, 1))
            for s in range(t, 0, -1):
                sens[:, s - 1] = np.einsum("nji,nj->ni", self.B, costate)
                costate = np.einsum("nji,nj->ni", self.A, costate)
            sens = sens.reshape(self.n_samples, n_dec)
            centered = g[r] - g[r].mean()
            spread = np.sqrt(np.mean(centered ** 2) + EPS_SMOOTH)
            jac[r] = sens.mean(axis=0) + con.kappa * (centered @ sens) / (self.n_samples * spread)
        return jac

    def _scales(self) -> np.ndarray:
        return np.array([self.prob.constraints[ci].scale for ci, _ in self.rows])

    def scaled_margins(self, u: np.ndarray) -> np.ndarray:
        return self._scales() * self.margins(u) if self.rows else np.zeros(0)

    def scaled_margins_jac(self, u: np.ndarray) -> np.ndarray:
        return self._scales()[:, None] * self.margins_jac(u) if self.rows else self.margins_jac(u)


def sampled_problem(scenario: Scenario, n: int, seed: int, horizon: Optional[int] = None) -> SampledProblem:
    """SampledProblem over n parameter draws of the scenario's mixture."""
    if n < 2:
        raise ValueError(f"Sample-average MPC needs at least 2 samples, got {n}")
    points = sample(scenario.mixture, n, seed).points
    x0_mean = _initial_states(scenario.problem.x_init, points, scenario.system.n_x).mean(axis=0)
    # per-sample initial states are used; the lifted x_init of prob is a placeholder
    prob = build_problem(scenario.problem, CoeffVector.deterministic(x0_mean, 1), scenario.dt, horizon)
    return SampledProblem(scenario.system, points, scenario.problem.x_init, prob)


def mc_mpc(
    scenario: Scenario,
    n: int,
    seed: int,
    cfg: Optional[SolverSettings] = None,
    horizon: Optional[int] = None,
) -> Tuple[MpcSolution, McReport]:
    """
    Sample-average MPC baseline solved with the surrogate solver's backend.

    Returns:
        (solution, report); solution.x_traj holds the sample-mean states as
        single-block coefficient vectors

    Raises:
        ValueError: If n < 2
        InfeasibleProblem: If the sampled margins stay above tolerance
    """
    cfg = cfg or SolverSettings()
    started = time.perf_counter()
    problem = sampled_problem(scenario, n, seed, horizon)
    u, stats, converged = augmented_lagrangian(problem, cfg)
    states = problem.simulate(u)
    wall_time = time.perf_counter() - started

    prob = problem.prob
    margins = np.full((len(prob.constraints), prob.T), np.nan)
    for (ci, t), value in zip(problem.rows, problem.margins(u)):
        margins[ci, t - 1] = value

    feasible = stats.max_violation <= cfg.feasibility_tol
    status = SolveStatus.INFEASIBLE if not feasible else (SolveStatus.OPTIMAL if converged else SolveStatus.MAX_ITERS)
    solution = MpcSolution(
        u_star=u.reshape(prob.T, prob.n_u),
        x_traj=tuple(CoeffVector.deterministic(mean, 1) for mean in states.mean(axis=1)),
        objective=problem.objective(u),
        stats=stats,
        status=status,
        margins=margins,
    )
    report = _report(states, prob.constraints, wall_time)
    logger.info(f"MC-MPC n={n}: status={status.value} objective={solution.objective:.6g} wall={wall_time:.3f}s")
    if not feasible:
        raise InfeasibleProblem(
            f"Sampled chance margins violated by {stats.max_violation:.3e}", solution=solution
        )
    return solution, report
