"""
Export service layer.
Writes run artifacts (trajectory CSV, solution/timing/comparison JSON,
intermediate objects) and re-imports emitted quadrature rules.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from src.errors import ConfigError
from src.models.basis import OrthonormalBasis
from src.models.pipeline import Comparison, PipelineResult, PipelineTiming
from src.models.problem import AffineConstraint, MpcSolution, SolverStats
from src.models.quadrature import QuadratureRule
from src.models.scenario import McReport
from src.models.system import CoeffVector, GalerkinSystem
from src.schemas.artifacts import (
    BasisExport,
    ComparisonExport,
    GalerkinExport,
    McSummaryExport,
    QuadratureExport,
    SolutionExport,
    SolverStatsExport,
    TimingExport,
)
from src.schemas.enums import RunMode, SolveStatus
from src.services.galerkin_service import mean_var
from src.services.smpc_service import chance_margin

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
SOLUTION_FILE = "solution.json"
TIMING_FILE = "timing.json"
COMPARISON_FILE = "comparison.json"
MC_TRAJECTORY_FILE = "mc_trajectory.csv"


def format_number(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return f"{float(value):.17g}"


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return None if math.isnan(value) else value


def _matrix(values: np.ndarray) -> List[List[float]]:
    return np.asarray(values, dtype=float).tolist()


def _write_json(model: BaseModel, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {path}")
    return path


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.debug(f"Wrote {path} ({len(rows)} rows)")
    return path


# Trajectories

def write_trajectory_csv(
    path: Path,
    means: np.ndarray,
    stds: np.ndarray,
    inputs: np.ndarray,
    dt: float,
    labels: Sequence[str],
) -> Path:
    """
    One row per time step: t, mean per state, std per state, u per channel.

    The last row has no input, its u cells are left blank.
    """
    n_u = inputs.shape[1]
    header = ["t"] + [f"mean_{label}" for label in labels] + [f"std_{label}" for label in labels]
    header += [f"u_{j}" for j in range(n_u)]
    rows = []
    for k in range(means.shape[0]):
        row = [format_number(k * dt)]
        row += [format_number(v) for v in means[k]]
        row += [format_number(v) for v in stds[k]]
        if k < inputs.shape[0]:
            row += [format_number(v) for v in inputs[k]]
        else:
            row += [""] * n_u
        rows.append(row)
    return _write_rows(path, header, rows)


def lifted_moments(states: Sequence[CoeffVector]) -> tuple:
    """Stacked (mean, std) of a lifted trajectory, each of shape (T+1, n_x)."""
    moments = [mean_var(x_hat) for x_hat in states]
    means = np.stack([m for m, _ in moments])
    stds = np.sqrt(np.stack([v for _, v in moments]))
    return means, stds


def write_pipeline_trajectory(result: PipelineResult, path: Path) -> Path:
    means, stds = lifted_moments(result.states)
    return write_trajectory_csv(
        path, means, stds, np.atleast_2d(result.inputs), result.scenario.dt, result.scenario.state_labels
    )


def write_mc_trajectory(report: McReport, inputs: np.ndarray, dt: float, labels: Sequence[str], path: Path) -> Path:
    return write_trajectory_csv(path, report.mean, report.std, np.atleast_2d(inputs), dt, labels)


# Solutions

def _stats_export(stats: SolverStats) -> SolverStatsExport:
    return SolverStatsExport(
        iterations=stats.iterations,
        outer_iterations=stats.outer_iterations,
        max_violation=stats.max_violation,
        violation_history=list(stats.violation_history),
    )


def _margins(table: np.ndarray) -> List[List[Optional[float]]]:
    return [[_finite_or_none(v) for v in row] for row in np.asarray(table, dtype=float)]


def closed_loop_margins(states: Sequence[CoeffVector], constraints: Sequence[AffineConstraint]) -> np.ndarray:
    """Chance margins of realized lifted states x_hat_1..x_hat_steps, NaN where inactive."""
    table = np.full((len(constraints), len(states) - 1), np.nan)
    for ci, con in enumerate(constraints):
        for t in range(1, len(states)):
            if con.is_active(t):
                table[ci, t - 1] = chance_margin(con, states[t])
    return table


def _closed_loop_status(solutions: Sequence[MpcSolution]) -> SolveStatus:
    if all(s.status is SolveStatus.OPTIMAL for s in solutions):
        return SolveStatus.OPTIMAL
    return SolveStatus.MAX_ITERS


def solution_export(result: PipelineResult) -> SolutionExport:
    """
    Solution artifact of a run.

    For receding-horizon runs u_star holds the applied inputs, margins are
    evaluated on the closed-loop states, objective is that of the first solve,
    iteration counts are summed and the violation history holds the final
    violation of every solve.
    """
    surrogate = result.surrogate
    common = dict(
        scenario=result.scenario.name,
        mode=result.mode.value,
        p=result.p,
        n_basis=surrogate.basis.size,
        rule_size=surrogate.rule.size,
    )
    if result.mode is RunMode.RECEDING:
        solutions = result.record.solutions
        stats = SolverStatsExport(
            iterations=sum(s.stats.iterations for s in solutions),
            outer_iterations=sum(s.stats.outer_iterations for s in solutions),
            max_violation=max(s.stats.max_violation for s in solutions),
            violation_history=[s.stats.max_violation for s in solutions],
        )
        return SolutionExport(
            **common,
            status=_closed_loop_status(solutions).value,
            objective=solutions[0].objective,
            u_star=_matrix(result.record.inputs),
            margins=_margins(closed_loop_margins(result.record.states, result.problem.constraints)),
            stats=stats,
        )
    solution = result.solution
    return SolutionExport(
        **common,
        status=solution.status.value,
        objective=solution.objective,
        u_star=_matrix(solution.u_star),
        margins=_margins(solution.margins),
        stats=_stats_export(solution.stats),
    )


def timing_export(timing: PipelineTiming) -> TimingExport:
    return TimingExport(
        basis_s=timing.basis_s,
        quadrature_s=timing.quadrature_s,
        projection_s=timing.projection_s,
        lifting_s=timing.lifting_s,
        solve_s=timing.solve_s,
        total_s=timing.total_s,
    )


def write_run_artifacts(result: PipelineResult, output_dir: Path) -> List[Path]:
    """Trajectory CSV, solution JSON and timing JSON of a pipeline run."""
    output_dir = Path(output_dir)
    paths = [
        write_pipeline_trajectory(result, output_dir / TRAJECTORY_FILE),
        _write_json(solution_export(result), output_dir / SOLUTION_FILE),
        _write_json(timing_export(result.timing), output_dir / TIMING_FILE),
    ]
    logger.info(f"Run artifacts written to {output_dir}")
    return paths


def comparison_export(comparison: Comparison) -> ComparisonExport:
    pipeline = comparison.pipeline
    report = comparison.mc_report
    return ComparisonExport(
        scenario=pipeline.scenario.name,
        n_samples=report.n_samples,
        report_step=min(pipeline.scenario.report_step, pipeline.problem.T),
        galerkin_wall_time_s=pipeline.timing.total_s,
        mc_wall_time_s=report.wall_time,
        speed_ratio=comparison.speed_ratio,
        input_difference=comparison.input_difference,
        galerkin_cost=comparison.galerkin_cost,
        mc_cost=comparison.mc_cost,
        ks_distance=dict(comparison.ks_distance),
        surrogate_violation_rate=[float(v) for v in comparison.surrogate_violation_rate],
        mc_violation_rate=[float(v) for v in comparison.mc_violation_rate],
        mc=McSummaryExport(
            n_samples=report.n_samples,
            wall_time_s=report.wall_time,
            violation_rate=[float(v) for v in report.violation_rate],
        ),
    )


def write_comparison_artifacts(comparison: Comparison, output_dir: Path) -> List[Path]:
    """Run artifacts of the surrogate leg plus the comparison JSON and the MC-MPC trajectory CSV."""
    output_dir = Path(output_dir)
    scenario = comparison.pipeline.scenario
    paths = write_run_artifacts(comparison.pipeline, output_dir)
    paths.append(_write_json(comparison_export(comparison), output_dir / COMPARISON_FILE))
    paths.append(
        write_mc_trajectory(
            comparison.mc_report,
            comparison.mc_solution.u_star,
            scenario.dt,
            scenario.state_labels,
            output_dir / MC_TRAJECTORY_FILE,
        )
    )
    return paths


# Intermediate objects

def basis_export(basis: OrthonormalBasis) -> BasisExport:
    return BasisExport(
        d=basis.d,
        p=basis.p,
        order=[list(alpha) for alpha in basis.order.indices],
        coeffs=_matrix(basis.coeffs),
        gram_residual=basis.gram_residual,
    )


def quadrature_export(rule: QuadratureRule) -> QuadratureExport:
    return QuadratureExport(
        d=rule.d,
        p=rule.exactness_degree // 2,
        nodes=_matrix(rule.nodes),
        weights=[float(w) for w in rule.weights],
        residual=rule.residual,
        basis2p_id=rule.basis2p_id,
        exactness_degree=rule.exactness_degree,
        negative_weights=rule.negative_weights,
    )


def galerkin_export(gs: GalerkinSystem) -> GalerkinExport:
    return GalerkinExport(
        n_x=gs.n_x,
        n_u=gs.n_u,
        n_w=gs.n_w,
        n_basis=gs.n_basis,
        A_hat=_matrix(gs.A_hat),
        B_hat=_matrix(gs.B_hat),
        D_hat=_matrix(gs.D_hat) if gs.D_hat is not None else None,
        V=_matrix(gs.V),
    )


def write_basis(basis: OrthonormalBasis, path: Path) -> Path:
    return _write_json(basis_export(basis), Path(path))


def write_rule(rule: QuadratureRule, path: Path) -> Path:
    return _write_json(quadrature_export(rule), Path(path))


def write_galerkin(gs: GalerkinSystem, path: Path) -> Path:
    return _write_json(galerkin_export(gs), Path(path))


def load_rule(path: Path) -> QuadratureRule:
    """
    Re-import a rule written by `write_rule`; writing it again reproduces the file byte for byte.

    Raises:
        ConfigError: If the file is not valid JSON or does not match the rule schema
    """
    path = Path(path)
    try:
        data = QuadratureExport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"{path}: not a quadrature rule: {exc}", field=str(path)) from exc
    nodes = np.asarray(data.nodes, dtype=float).reshape(len(data.weights), data.d)
    return QuadratureRule(
        nodes=nodes,
        weights=np.asarray(data.weights, dtype=float),
        residual=data.residual,
        basis2p_id=data.basis2p_id,
        exactness_degree=data.exactness_degree,
    )
