"""
Stochastic MPC service layer.
Lifts the cost and chance constraints onto the Galerkin coefficients,
condenses the dynamics and solves the surrogate program with an
augmented-Lagrangian method over box-bounded inputs.
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from src.errors import DimensionMismatch, InfeasibleProblem
from src.models.problem import (
    AffineConstraint,
    ClosedLoopRecord,
    MpcProblem,
    MpcSolution,
    SolverSettings,
    SolverStats,
    Tracking,
)
from src.models.scenario import ProblemSpec
from src.models.system import CoeffVector, GalerkinSystem
from src.schemas.enums import SolveStatus

logger = logging.getLogger(__name__)

EPS_SMOOTH = 1e-12

Disturbance = Union[None, CoeffVector, Sequence[CoeffVector]]


def lift_cost(Q: np.ndarray, R: np.ndarray, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lifted stage weights for basis-major coefficient vectors.

    Returns:
        (V kron Q, V kron R); for x_hat = [c_1; ...; c_Np] this gives
        x_hat^T Q_hat x_hat = sum_ij v_ij c_i^T Q c_j
    """
    return np.kron(V, Q), np.kron(V, R)


def chance_margin(constraint: AffineConstraint, x_hat: CoeffVector) -> float:
    """
    Mean plus kappa standard deviations of g(x) = a^T x + b.

    The constraint holds with probability >= beta whenever the margin is <= 0.
    """
    if x_hat.base_dim != constraint.a.size:
        raise DimensionMismatch(f"Constraint acts on {constraint.a.size} states, got {x_hat.base_dim}")
    g = x_hat.blocks @ constraint.a
    g[0] += constraint.b
    return float(g[0] + constraint.kappa * np.sqrt(np.sum(g[1:] ** 2) + EPS_SMOOTH))


class ConstrainedProblem(Protocol):
    """Smooth inequality-constrained program over a box, as seen by the solver."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_constraints(self) -> int: ...

    def initial_guess(self) -> np.ndarray: ...

    def merit(self, u: np.ndarray) -> Tuple[float, np.ndarray]: ...

    def objective(self, u: np.ndarray) -> float: ...

    def scaled_margins(self, u: np.ndarray) -> np.ndarray: ...

    def scaled_margins_jac(self, u: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class MarginRow:
    """Chance margin of one constraint at one step, affine in the decisions before the sqrt."""

    constraint: int
    t: int
    kappa: float
    scale: float


class CondensedProblem:
    """
    Surrogate program with the lifted dynamics substituted out.

    Decisions are the stacked inputs u = [u_0; ...; u_{T-1}]. Lifted states are
    x_hat_t = free[t-1] + sens[t-1] @ u and the objective is
    u^T H u + 2 lin^T u + const.
    """

    def __init__(
        self,
        H: np.ndarray,
        lin: np.ndarray,
        const: float,
        free: np.ndarray,
        sens: np.ndarray,
        rows: List[MarginRow],
        offsets: np.ndarray,
        linears: np.ndarray,
        lower: np.ndarray,
        upper: np.ndarray,
    ):
        self.H = H
        self.lin = lin
        self.const = const
        self.free = free
        self.sens = sens
        self.rows = rows
        self.offsets = offsets        # (n_rows, N_p)
        self.linears = linears        # (n_rows, N_p, n_dec)
        self.lower = lower
        self.upper = upper
        self.kappas = np.array([row.kappa for row in rows])
        self.scales = np.array([row.scale for row in rows])
        self._merit_scale = max(1.0, float(np.abs(np.diag(H)).max()))
        try:
            self._factor = cho_factor(H)
            self.u_unconstrained = cho_solve(self._factor, -lin)
        except LinAlgError:
            self.u_unconstrained = np.linalg.lstsq(H, -lin, rcond=None)[0]

    @property
    def n_decisions(self) -> int:
        return int(self.lin.size)

    @property
    def n_constraints(self) -> int:
        return len(self.rows)

    def initial_guess(self) -> np.ndarray:
        return np.clip(self.u_unconstrained, self.lower, self.upper)

    def objective(self, u: np.ndarray) -> float:
        return float(u @ self.H @ u + 2.0 * self.lin @ u + self.const)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return 2.0 * (self.H @ u + self.lin)

    def merit(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        # Completed square (u - u*)^T H (u - u*): same minimizers, no cancellation
        delta = u - self.u_unconstrained
        h_delta = self.H @ delta
        return float(delta @ h_delta) / self._merit_scale, 2.0 * h_delta / self._merit_scale

    def states(self, u: np.ndarray) -> np.ndarray:
        """Lifted states x_hat_1..x_hat_T, shape (T, n_x * N_p)."""
        return self.free + self.sens @ u

    def _expansion(self, u: np.ndarray) -> np.ndarray:
        return self.offsets + self.linears @ u

    def margins(self, u: np.ndarray) -> np.ndarray:
        """Unscaled chance margins, one per (constraint, active step) row."""
        if not self.rows:
            return np.zeros(0)
        g = self._expansion(u)
        return g[:, 0] + self.kappas * np.sqrt(np.sum(g[:, 1:] ** 2, axis=1) + EPS_SMOOTH)

    def margins_jac(self, u: np.ndarray) -> np.ndarray:
        """d margins / d u, shape (n_rows, n_dec)."""
        if not self.rows:
            return np.zeros((0, self.n_decisions))
        g = self._expansion(u)
        spread = np.sqrt(np.sum(g[:, 1:] ** 2, axis=1) + EPS_SMOOTH)
        variance_grad = np.einsum("rk,rkd->rd", g[:, 1:], self.linears[:, 1:, :])
        return self.linears[:, 0, :] + (self.kappas / spread)[:, None] * variance_grad

    def scaled_margins(self, u: np.ndarray) -> np.ndarray:
        return self.scales * self.margins(u)

    def scaled_margins_jac(self, u: np.ndarray) -> np.ndarray:
        return self.scales[:, None] * self.margins_jac(u)


def _disturbance_sequence(w_hat: Disturbance, T: int) -> Optional[List[CoeffVector]]:
    if w_hat is None:
        return None
    if isinstance(w_hat, CoeffVector):
        return [w_hat] * T
    w_hat = list(w_hat)
    if len(w_hat) != T:
        raise DimensionMismatch(f"Expected {T} disturbance vectors, got {len(w_hat)}")
    return w_hat


def condense(prob: MpcProblem, gs: GalerkinSystem, w_hat: Disturbance = None) -> CondensedProblem:
    """
    Substitute the lifted dynamics into cost and chance margins.

    Args:
        prob: Surrogate problem
        gs: Lifted system
        w_hat: Disturbance coefficients, one per step or a single constant vector

    Returns:
        CondensedProblem over the T * n_u deterministic inputs
    """
    if prob.n_x != gs.n_x or prob.n_u != gs.n_u or prob.x_init.n_basis != gs.n_basis:
        raise DimensionMismatch("Problem dimensions do not match the lifted system")

    T, n_u, n_basis = prob.T, prob.n_u, gs.n_basis
    n_lift = gs.n_x * n_basis
    n_dec = T * n_u
    disturbances = _disturbance_sequence(w_hat, T)
    if disturbances is not None and gs.D_hat is None:
        raise DimensionMismatch("System has no disturbance channel")

    B_u = gs.B_hat[:, :n_u]
    free = np.zeros((T, n_lift))
    sens = np.zeros((T, n_lift, n_dec))
    x = prob.x_init.coeffs
    S = np.zeros((n_lift, n_dec))
    for t in range(T):
        x = gs.A_hat @ x
        if disturbances is not None:
            x = x + gs.D_hat @ disturbances[t].coeffs
        S = gs.A_hat @ S
        S[:, t * n_u:(t + 1) * n_u] += B_u
        free[t] = x
        sens[t] = S

    V = gs.V
    H = np.zeros((n_dec, n_dec))
    lin = np.zeros(n_dec)
    const = 0.0
    tracking: Optional[Tracking] = prob.tracking
    for t in range(T):
        stage = prob.Q[t]
        linear = np.zeros(n_lift)
        if tracking is not None:
            CtS = tracking.C.T @ tracking.S
            stage = stage + CtS @ tracking.C
            linear = np.kron(V[:, 0], CtS @ tracking.y_ref[t])
            const += V[0, 0] * float(tracking.y_ref[t] @ tracking.S @ tracking.y_ref[t])
        P = np.kron(V, stage)
        H += sens[t].T @ P @ sens[t]
        lin += sens[t].T @ (P @ free[t] - linear)
        const += float(free[t] @ P @ free[t] - 2.0 * linear @ free[t])
        H[t * n_u:(t + 1) * n_u, t * n_u:(t + 1) * n_u] += V[0, 0] * prob.R[t]
    H = 0.5 * (H + H.T)

    rows: List[MarginRow] = []
    offsets, linears = [], []
    for ci, con in enumerate(prob.constraints):
        projector = np.kron(np.eye(n_basis), con.a[None, :])
        for t in range(1, T + 1):
            if not con.is_active(t):
                continue
            offset = projector @ free[t - 1]
            offset[0] += con.b
            rows.append(MarginRow(constraint=ci, t=t, kappa=con.kappa, scale=con.scale))
            offsets.append(offset)
            linears.append(projector @ sens[t - 1])

    lower = np.tile(prob.u_lower, T)
    upper = np.tile(prob.u_upper, T)
    return CondensedProblem(
        H=H,
        lin=lin,
        const=const,
        free=free,
        sens=sens,
        rows=rows,
        offsets=np.array(offsets).reshape(len(rows), n_basis),
        linears=np.array(linears).reshape(len(rows), n_basis, n_dec),
        lower=lower,
        upper=upper,
    )


def _bounds(lower: np.ndarray, upper: np.ndarray) -> List[Tuple[Optional[float], Optional[float]]]:
    return [
        (float(lo) if np.isfinite(lo) else None, float(hi) if np.isfinite(hi) else None)
        for lo, hi in zip(lower, upper)
    ]


def augmented_lagrangian(
    problem: ConstrainedProblem,
    cfg: Optional[SolverSettings] = None,
) -> Tuple[np.ndarray, SolverStats, bool]:
    """
    Powell-Hestenes-Rockafellar augmented Lagrangian over a box.

    Inner problems are solved by L-BFGS-B (projected quasi-Newton); the
    multipliers follow lambda <- max(0, lambda + rho * c) and rho grows when the
    violation does not drop by a factor of four.

    An outer iterate is accepted only when its violation beyond the
    feasibility tolerance does not exceed that of the last accepted iterate,
    so stats.violation_history is non-increasing.

    Returns:
        (best accepted decisions, stats, converged flag)
    """
    cfg = cfg or SolverSettings()
    started = time.perf_counter()
    bounds = _bounds(problem.lower, problem.upper)
    n_con = problem.n_constraints

    u = problem.initial_guess()
    lam = np.zeros(n_con)
    rho = cfg.rho_init
    stats = SolverStats()
    best_u: Optional[np.ndarray] = None
    best_excess = np.inf
    previous_violation = np.inf
    converged = False

    for outer in range(1, cfg.max_outer + 1):
        multipliers, penalty = lam, rho

        def lagrangian(x: np.ndarray) -> Tuple[float, np.ndarray]:
            value, grad = problem.merit(x)
            if n_con:
                shifted = np.maximum(0.0, multipliers + penalty * problem.scaled_margins(x))
                value += (shifted @ shifted - multipliers @ multipliers) / (2.0 * penalty)
                grad = grad + problem.scaled_margins_jac(x).T @ shifted
            return value, grad

        result = minimize(
            lagrangian,
            u,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_inner, "ftol": 1e-15, "gtol": cfg.inner_gtol},
        )
        stats.iterations += int(result.nit)
        stats.outer_iterations = outer
        u = np.clip(result.x, problem.lower, problem.upper)

        margins = problem.scaled_margins(u)
        violation = max(0.0, float(margins.max())) if n_con else 0.0
        excess = max(0.0, violation - cfg.feasibility_tol)
        if best_u is None or excess <= best_excess:
            best_u, best_excess = u.copy(), excess
            stats.max_violation = violation
            stats.violation_history.append(excess)

        logger.debug(f"AL outer {outer}: violation={violation:.3e} rho={rho:.1e} inner={result.nit}")

        if not n_con:
            converged = bool(result.success)
            break

        updated = np.maximum(0.0, lam + rho * margins)
        settled = np.abs(updated - lam).max() <= cfg.multiplier_rtol * max(1.0, float(np.abs(updated).max()))
        lam = updated
        if violation <= cfg.feasibility_tol and settled:
            converged = True
            break
        if violation > cfg.feasibility_tol and violation > 0.25 * previous_violation:
            rho = min(rho * cfg.rho_growth, cfg.rho_max)
        previous_violation = violation

    stats.runtime_s = time.perf_counter() - started
    return best_u, stats, converged


def _margin_table(cp: CondensedProblem, u: np.ndarray, n_constraints: int, T: int) -> np.ndarray:
    table = np.full((n_constraints, T), np.nan)
    for row, value in zip(cp.rows, cp.margins(u)):
        table[row.constraint, row.t - 1] = value
    return table


def solve_open_loop(
    prob: MpcProblem,
    gs: GalerkinSystem,
    w_hat: Disturbance = None,
    cfg: Optional[SolverSettings] = None,
) -> MpcSolution:
    """
    Solve the surrogate chance-constrained program over deterministic inputs.

    Args:
        prob: Surrogate problem
        gs: Lifted system
        w_hat: Disturbance coefficients (per step, constant, or None)
        cfg: Solver settings

    Returns:
        MpcSolution with status Optimal or MaxIters

    Raises:
        InfeasibleProblem: If the scaled margins stay above the feasibility
            tolerance; the best iterate is attached
    """
    cfg = cfg or SolverSettings()
    cp = condense(prob, gs, w_hat)
    u, stats, converged = augmented_lagrangian(cp, cfg)

    lifted = cp.states(u)
    x_traj = (prob.x_init,) + tuple(CoeffVector(coeffs=x, base_dim=gs.n_x) for x in lifted)
    feasible = stats.max_violation <= cfg.feasibility_tol
    if not feasible:
        status = SolveStatus.INFEASIBLE
    elif converged:
        status = SolveStatus.OPTIMAL
    else:
        status = SolveStatus.MAX_ITERS

    solution = MpcSolution(
        u_star=u.reshape(prob.T, prob.n_u),
        x_traj=x_traj,
        objective=cp.objective(u),
        stats=stats,
        status=status,
        margins=_margin_table(cp, u, len(prob.constraints), prob.T),
    )
    logger.info(
        f"Surrogate solve T={prob.T}: status={status.value} objective={solution.objective:.6g} "
        f"violation={stats.max_violation:.2e} outer={stats.outer_iterations}"
    )
    if not feasible:
        raise InfeasibleProblem(
            f"Chance margins violated by {stats.max_violation:.3e} after {stats.outer_iterations} outer iterations",
            solution=solution,
        )
    return solution


def build_problem(
    spec: ProblemSpec,
    x_init: CoeffVector,
    dt: float,
    horizon: Optional[int] = None,
) -> MpcProblem:
    """
    Stack per-step data of a scenario problem.

    Args:
        spec: Problem data stated in terms of xi
        x_init: Lifted initial state
        dt: Step length in seconds; reference row t-1 is y_ref(t * dt)
        horizon: Number of steps (defaults to spec.horizon)
    """
    T = horizon or spec.horizon
    tracking = None
    if spec.C is not None:
        times = dt * np.arange(1, T + 1)
        if spec.reference is not None:
            y_ref = spec.reference.at(times)
        else:
            y_ref = np.zeros((T, spec.C.shape[0]))
        tracking = Tracking(C=spec.C, S=spec.S, y_ref=y_ref)
    return MpcProblem(
        T=T,
        Q=np.repeat(spec.Q[None, :, :], T, axis=0),
        R=np.repeat(spec.R[None, :, :], T, axis=0),
        x_init=x_init,
        u_lower=spec.u_lower,
        u_upper=spec.u_upper,
        constraints=spec.constraints,
        tracking=tracking,
    )


def _shift_constraint(con: AffineConstraint, start: int, horizon: int) -> AffineConstraint:
    if con.active_times is None:
        return con
    shifted = tuple(t - start for t in con.active_times if 1 <= t - start <= horizon)
    return replace(con, active_times=shifted)


def window_problem(prob: MpcProblem, start: int, horizon: int, x_init: CoeffVector) -> MpcProblem:
    """
    Sub-problem of length `horizon` starting at step `start` from the given lifted state.

    Per-step rows past the end of prob are clamped to its last row.
    """
    index = np.minimum(np.arange(start, start + horizon), prob.T - 1)
    tracking = None
    if prob.tracking is not None:
        tracking = replace(prob.tracking, y_ref=prob.tracking.y_ref[index])
    return MpcProblem(
        T=horizon,
        Q=prob.Q[index],
        R=prob.R[index],
        x_init=x_init,
        u_lower=prob.u_lower,
        u_upper=prob.u_upper,
        constraints=tuple(_shift_constraint(c, start, horizon) for c in prob.constraints),
        tracking=tracking,
    )


def receding_horizon(
    prob: MpcProblem,
    gs: GalerkinSystem,
    steps: int,
    replan_horizon: int,
    w_supplier: Optional[Callable[[int], Disturbance]] = None,
    cfg: Optional[SolverSettings] = None,
) -> ClosedLoopRecord:
    """
    Closed-loop run: solve, apply the first input, advance the lifted state.

    Args:
        prob: Problem whose per-step data covers the run (rows are clamped)
        gs: Lifted system
        steps: Number of applied inputs
        replan_horizon: Length of each open-loop solve
        w_supplier: Maps a step index to the disturbance coefficients of its window
        cfg: Solver settings

    Returns:
        ClosedLoopRecord with steps + 1 lifted states

    Raises:
        InfeasibleProblem: With `step` set to the failing step index
    """
    if steps < 1 or replan_horizon < 1:
        raise ValueError("steps and replan_horizon must be at least 1")

    state = prob.x_init
    states = [state]
    inputs, solutions = [], []
    B_u = gs.B_hat[:, :gs.n_u]
    for step in range(steps):
        window = window_problem(prob, step, replan_horizon, state)
        w_hat = w_supplier(step) if w_supplier is not None else None
        try:
            solution = solve_open_loop(window, gs, w_hat, cfg)
        except InfeasibleProblem as exc:
            raise InfeasibleProblem(
                f"Receding-horizon step {step}: {exc.message}", solution=exc.solution, step=step
            ) from exc

        u0 = solution.u_star[0]
        x_next = gs.A_hat @ state.coeffs + B_u @ u0
        first_w = _disturbance_sequence(w_hat, replan_horizon)
        if first_w is not None:
            x_next = x_next + gs.D_hat @ first_w[0].coeffs
        state = CoeffVector(coeffs=x_next, base_dim=gs.n_x)

        states.append(state)
        inputs.append(u0)
        solutions.append(solution)

    logger.info(f"Receding-horizon run finished: {steps} steps, horizon {replan_horizon}")
    return ClosedLoopRecord(states=tuple(states), inputs=np.array(inputs), solutions=tuple(solutions))
