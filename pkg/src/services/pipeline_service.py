"""
Pipeline service layer.
Runs the surrogate pipeline end to end (basis, quadrature, projection,
lifting, solve) with per-step timing, and the comparison against MC-MPC.
"""
import logging
import time
from typing import Optional

import numpy as np

from src.models.pipeline import Comparison, PipelineResult, PipelineTiming, Surrogate
from src.models.problem import SolverSettings
from src.models.quadrature import QuadConfig
from src.models.scenario import Scenario
from src.schemas.enums import RunMode
from src.schemas.scenario import RunConfig
from src.services.basis_service import gram_schmidt
from src.services.galerkin_service import expand_function, project_matrices, sample_surrogate
from src.services.monte_carlo_service import (
    compare_pdf,
    mc_mpc,
    mc_propagate,
    sampled_problem,
    surrogate_violation_rates,
)
from src.services.quadrature_service import generate
from src.services.smpc_service import build_problem, receding_horizon, solve_open_loop
from src.services.uncertainty_service import moment_oracle, sample

logger = logging.getLogger(__name__)

KS_RESOLUTION = 1e-9


def build_surrogate(
    scenario: Scenario,
    p: int,
    quad_cfg: Optional[QuadConfig] = None,
    timing: Optional[PipelineTiming] = None,
) -> Surrogate:
    """
    Basis, quadrature rule, lifted system and lifted initial state/disturbance.

    Args:
        scenario: Benchmark or custom scenario
        p: Polynomial order
        quad_cfg: Quadrature generation settings
        timing: Filled with per-step wall times when given
    """
    timing = timing if timing is not None else PipelineTiming()
    mixture, system = scenario.mixture, scenario.system

    started = time.perf_counter()
    oracle = moment_oracle(mixture, p)
    basis = gram_schmidt(oracle, mixture.dimension, p)
    basis2p = gram_schmidt(oracle, mixture.dimension, 2 * p)
    timing.basis_s = time.perf_counter() - started

    started = time.perf_counter()
    rule = generate(mixture, basis2p, quad_cfg or QuadConfig())
    timing.quadrature_s = time.perf_counter() - started

    started = time.perf_counter()
    galerkin = project_matrices(system, basis, rule)
    timing.projection_s = time.perf_counter() - started

    started = time.perf_counter()
    x_init = expand_function(scenario.problem.x_init, basis, rule)
    w_hat = expand_function(system.omega, basis, rule) if system.omega is not None else None
    timing.lifting_s = time.perf_counter() - started

    return Surrogate(basis=basis, basis2p=basis2p, rule=rule, galerkin=galerkin, x_init=x_init, w_hat=w_hat)


def run_pipeline(
    scenario: Scenario,
    run: RunConfig,
    solver: Optional[SolverSettings] = None,
) -> PipelineResult:
    """
    Build the surrogate and solve it open-loop or in receding horizon.

    Args:
        scenario: Scenario to control
        run: Order, horizon, mode, steps and seeds
        solver: Augmented-Lagrangian settings

    Returns:
        PipelineResult with timing per step

    Raises:
        QuadratureError: If no exact rule can be generated
        InfeasibleProblem: If a solve cannot satisfy the chance margins
    """
    timing = PipelineTiming()
    surrogate = build_surrogate(scenario, run.p, QuadConfig(seed=run.quadrature_seed), timing)

    started = time.perf_counter()
    if run.mode is RunMode.RECEDING:
        length = run.steps + run.horizon - 1
    else:
        length = run.horizon
    problem = build_problem(scenario.problem, surrogate.x_init, scenario.dt, length)
    timing.lifting_s += time.perf_counter() - started

    started = time.perf_counter()
    solution, record = None, None
    if run.mode is RunMode.RECEDING:
        w_hat = surrogate.w_hat
        record = receding_horizon(
            problem,
            surrogate.galerkin,
            steps=run.steps,
            replan_horizon=run.horizon,
            w_supplier=(lambda step: w_hat) if w_hat is not None else None,
            cfg=solver,
        )
    else:
        solution = solve_open_loop(problem, surrogate.galerkin, surrogate.w_hat, solver)
    timing.solve_s = time.perf_counter() - started

    logger.info(
        f"Pipeline '{scenario.name}' p={run.p} mode={run.mode.value}: "
        f"N_p={surrogate.basis.size} M={surrogate.rule.size} total {timing.total_s:.3f}s"
    )
    return PipelineResult(
        scenario=scenario,
        mode=run.mode,
        p=run.p,
        surrogate=surrogate,
        problem=problem,
        timing=timing,
        solution=solution,
        record=record,
    )


def _worst_rate(rates: np.ndarray) -> np.ndarray:
    if rates.size == 0:
        return np.zeros(rates.shape[0])
    return np.where(np.isnan(rates), 0.0, rates).max(axis=1)


def compare_with_mc(
    scenario: Scenario,
    run: RunConfig,
    n: int,
    solver: Optional[SolverSettings] = None,
) -> Comparison:
    """
    Run the open-loop surrogate pipeline and the n-sample MC-MPC baseline.

    Seeds derive from run.mc_seed: the baseline uses it directly, the cost
    comparison, surrogate sampling and true-system propagation use the next
    three values.

    Raises:
        ValueError: If n < 2
    """
    if n < 2:
        raise ValueError(f"Monte Carlo comparison needs at least 2 samples, got {n}")
    pipeline = run_pipeline(scenario, run.model_copy(update={"mode": RunMode.OPEN_LOOP}), solver)
    mc_solution, mc_report = mc_mpc(scenario, n, run.mc_seed, solver, horizon=run.horizon)

    solution = pipeline.solution
    u_galerkin = solution.u_star
    costs = sampled_problem(scenario, n, run.mc_seed + 1, run.horizon)

    step = min(scenario.report_step, run.horizon)
    basis = pipeline.surrogate.basis
    points = sample(scenario.mixture, n, run.mc_seed + 2).points
    surrogate = sample_surrogate(solution.x_traj[step], basis, points)
    truth = mc_propagate(
        scenario.system,
        scenario.mixture,
        scenario.problem.x_init,
        u_galerkin,
        n,
        run.mc_seed + 3,
        pipeline.problem.constraints,
    )
    reference = truth.state_samples[step]
    ks = {}
    for i, label in enumerate(scenario.state_labels):
        scale = max(1.0, float(np.abs(reference[:, i]).max()))
        ks[label] = compare_pdf(surrogate[:, i], reference[:, i], resolution=KS_RESOLUTION * scale)

    rates = surrogate_violation_rates(
        solution, pipeline.problem.constraints, basis, scenario.mixture, n, run.mc_seed + 2
    )
    comparison = Comparison(
        pipeline=pipeline,
        mc_solution=mc_solution,
        mc_report=mc_report,
        speed_ratio=mc_report.wall_time / max(pipeline.timing.total_s, 1e-12),
        input_difference=float(np.linalg.norm(u_galerkin - mc_solution.u_star)),
        galerkin_cost=costs.objective(u_galerkin.ravel()),
        mc_cost=costs.objective(mc_solution.u_star.ravel()),
        ks_distance=ks,
        surrogate_violation_rate=_worst_rate(rates),
        mc_violation_rate=truth.violation_rate,
    )
    logger.info(
        f"Comparison '{scenario.name}' n={n}: speed ratio {comparison.speed_ratio:.2f}, "
        f"input difference {comparison.input_difference:.3e}"
    )
    return comparison
