"""
Unit tests for the pipeline service.
Tests surrogate construction, open-loop and receding-horizon runs and the
comparison against sampled propagation.
"""
import numpy as np
import pytest

from src.schemas.enums import RunMode, SolveStatus
from src.services.export_service import closed_loop_margins
from src.services.galerkin_service import mean_var, sample_surrogate
from src.services.monte_carlo_service import compare_pdf, mc_propagate
from src.services.pipeline_service import build_surrogate, compare_with_mc, run_pipeline
from src.services.scenario_service import load_config, scenario_quadrotor, scenario_vehicle
from src.services.uncertainty_service import sample


@pytest.fixture(scope="module")
def run_cfg():
    return load_config("obstacle").run


@pytest.fixture(scope="module")
def result(obstacle, run_cfg):
    return run_pipeline(obstacle, run_cfg)


@pytest.fixture(scope="module")
def comparison(obstacle, run_cfg):
    """Obstacle comparison at the packaged 5000 samples."""
    return compare_with_mc(obstacle, run_cfg, 5000)


@pytest.fixture(scope="module")
def vehicle_run():
    scenario = scenario_vehicle()
    return scenario, run_pipeline(scenario, load_config("vehicle").run)


@pytest.fixture(scope="module")
def quadrotor_run():
    scenario = scenario_quadrotor()
    return scenario, run_pipeline(scenario, load_config("quadrotor").run)


class TestBuildSurrogate:
    """Test cases for the pre-solve pipeline steps."""

    def test_sizes(self, obstacle):
        """Order 2 in two parameters gives 6 basis terms and a degree-4 rule."""
        surrogate = build_surrogate(obstacle, 2)
        assert surrogate.basis.size == 6
        assert surrogate.basis2p.size == 15
        assert surrogate.rule.exactness_degree == 4
        assert surrogate.galerkin.A_hat.shape == (12, 12)
        assert surrogate.w_hat is None

    def test_initial_state_is_deterministic(self, obstacle):
        """A fixed initial state lands in the first block only."""
        surrogate = build_surrogate(obstacle, 2)
        np.testing.assert_allclose(surrogate.x_init.blocks[0], [20.0, 10.0], rtol=1e-7)

    def test_disturbance_lifted(self):
        """The quadrotor disturbance is expanded with base dimension 3."""
        surrogate = build_surrogate(scenario_quadrotor(), 1)
        assert surrogate.basis.size == 4
        assert surrogate.w_hat.base_dim == 3


class TestRunPipeline:
    """Test cases for end-to-end runs."""

    def test_open_loop(self, result):
        """An open-loop run returns one solution and the full predicted trajectory."""
        assert result.mode is RunMode.OPEN_LOOP
        assert result.record is None
        assert len(result.states) == 5
        assert result.inputs.shape == (4, 1)
        assert result.final_solution is result.solution
        assert result.solution.status in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITERS)

    def test_timing(self, result):
        """Stage timings are non-negative and add up to the total."""
        timing = result.timing
        parts = [timing.basis_s, timing.quadrature_s, timing.projection_s, timing.lifting_s, timing.solve_s]
        assert all(part >= 0.0 for part in parts)
        assert timing.total_s == pytest.approx(sum(parts))

    def test_receding(self, obstacle, run_cfg):
        """A receding run applies one input per step and records each solve."""
        run = run_cfg.model_copy(update={"mode": RunMode.RECEDING, "steps": 2, "horizon": 2, "report_step": 1})
        receding = run_pipeline(obstacle, run)
        assert len(receding.states) == 3
        assert receding.inputs.shape == (2, 1)
        assert receding.problem.T == 3
        assert receding.final_solution is receding.record.solutions[-1]

    def test_deterministic_rerun(self, obstacle, run_cfg, result):
        """The same config reproduces the inputs bit for bit."""
        again = run_pipeline(obstacle, run_cfg)
        np.testing.assert_array_equal(again.inputs, result.inputs)


@pytest.mark.slow
class TestSurrogateAccuracy:
    """Moments and distribution of the surrogate against sampled propagation."""

    def test_moments_at_report_step(self, obstacle, result):
        """Mean within 1% and standard deviation within 3% of 10^5 samples."""
        truth = mc_propagate(obstacle.system, obstacle.mixture, obstacle.problem.x_init, result.inputs, 100_000, 11)
        mean, var = mean_var(result.states[2])
        np.testing.assert_allclose(mean, truth.mean[2], rtol=0.01)
        np.testing.assert_allclose(np.sqrt(var), truth.std[2], rtol=0.03)

    def test_distribution_at_report_step(self, obstacle, result):
        """The surrogate distribution is within KS distance 0.05 of the true one."""
        n = 100_000
        truth = mc_propagate(obstacle.system, obstacle.mixture, obstacle.problem.x_init, result.inputs, n, 12)
        values = sample_surrogate(result.states[2], result.surrogate.basis, sample(obstacle.mixture, n, 13))
        for i in range(2):
            assert compare_pdf(values[:, i], truth.state_samples[2][:, i]) <= 0.05

    def test_violation_rate_within_confidence(self, obstacle, result):
        """The half-space constraint is violated in at most 1.5% of true trajectories."""
        truth = mc_propagate(
            obstacle.system, obstacle.mixture, obstacle.problem.x_init, result.inputs, 100_000, 14,
            result.problem.constraints,
        )
        assert truth.violation_rate[0] <= 0.015


class TestCompareWithMc:
    """Test cases for the MC-MPC comparison."""

    def test_needs_two_samples(self, obstacle, run_cfg):
        """A single sample cannot estimate a variance."""
        with pytest.raises(ValueError):
            compare_with_mc(obstacle, run_cfg, 1)

    def test_fields(self, obstacle, run_cfg):
        """Every comparison field is populated with values in range."""
        comparison = compare_with_mc(obstacle, run_cfg, 200)
        assert set(comparison.ks_distance) == {"x1", "x2"}
        assert all(0.0 <= ks <= 1.0 for ks in comparison.ks_distance.values())
        assert comparison.speed_ratio > 0.0
        assert np.isfinite(comparison.galerkin_cost)
        assert np.isfinite(comparison.mc_cost)
        assert comparison.surrogate_violation_rate.shape == (1,)
        assert comparison.mc_violation_rate.shape == (1,)
        assert comparison.pipeline.mode is RunMode.OPEN_LOOP

    def test_deterministic_distributions_match(self, obstacle_deterministic, run_cfg):
        """Without uncertainty both sides are point masses at the same state."""
        comparison = compare_with_mc(obstacle_deterministic, run_cfg, 200)
        assert comparison.ks_distance == {"x1": 0.0, "x2": 0.0}


@pytest.mark.slow
class TestCompareAtScale:
    """The 5000-sample baseline against the surrogate pipeline."""

    def test_surrogate_is_faster(self, comparison):
        """The full surrogate pipeline beats the sample-average solve at least fivefold."""
        assert comparison.speed_ratio >= 5.0

    def test_costs_agree(self, comparison):
        """Both input sequences reach the same sample-average cost within 5%."""
        assert abs(comparison.galerkin_cost - comparison.mc_cost) <= 0.05 * abs(comparison.mc_cost)


@pytest.mark.slow
class TestVehicleRegulation:
    """Receding-horizon lateral regulation from a 1 m offset."""

    def test_lateral_error_regulated(self, vehicle_run):
        """The mean lateral error ends within 5 cm of the path."""
        _, result = vehicle_run
        mean, _ = mean_var(result.states[-1])
        assert abs(mean[0]) <= 0.05

    def test_box_margins_hold(self, vehicle_run):
        """No state box chance constraint is violated along the closed loop."""
        scenario, result = vehicle_run
        margins = closed_loop_margins(result.states, scenario.problem.constraints)
        assert np.nanmax(margins) <= 1e-5


@pytest.mark.slow
class TestQuadrotorHelix:
    """Receding-horizon helix tracking under position disturbances."""

    def test_tracking_error_decreases(self, quadrotor_run):
        """The position error over the last steps is below the initial transient."""
        scenario, result = quadrotor_run
        means = np.array([mean_var(x)[0] for x in result.states])
        times = scenario.dt * np.arange(len(means))
        error = np.linalg.norm(means[:, [0, 2, 4]] - scenario.problem.reference.at(times), axis=1)
        assert error[-20:].mean() < error[:10].mean()

    def test_attitude_margins_hold(self, quadrotor_run):
        """Roll and pitch limits hold in probability at every closed-loop step."""
        scenario, result = quadrotor_run
        margins = closed_loop_margins(result.states, scenario.problem.constraints)
        assert np.nanmax(margins) <= 1e-5
