"""
Unit tests for the export service.
Tests trajectory CSV layout, JSON artifacts and quadrature rule re-import.
"""
import csv
import json

import numpy as np
import pytest

from src.errors import ConfigError
from src.models.problem import AffineConstraint
from src.models.system import CoeffVector
from src.services.export_service import (
    SOLUTION_FILE,
    TIMING_FILE,
    TRAJECTORY_FILE,
    basis_export,
    closed_loop_margins,
    format_number,
    load_rule,
    write_rule,
    write_run_artifacts,
    write_trajectory_csv,
)
from src.services.pipeline_service import run_pipeline
from src.services.scenario_service import load_config


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def result(obstacle):
    return run_pipeline(obstacle, load_config("obstacle").run)


class TestTrajectoryCsv:
    """Test cases for the per-step trajectory table."""

    def test_layout(self, tmp_path):
        """Means, then standard deviations, then inputs; the last input cell is blank."""
        path = write_trajectory_csv(
            tmp_path / "traj.csv",
            means=np.array([[1.0, 2.0], [1.5, 2.5], [2.0, 3.0]]),
            stds=np.array([[0.0, 0.0], [0.1, 0.2], [0.3, 0.4]]),
            inputs=np.array([[0.5], [-0.5]]),
            dt=0.5,
            labels=("x1", "x2"),
        )
        rows = _read_csv(path)
        assert rows[0] == ["t", "mean_x1", "mean_x2", "std_x1", "std_x2", "u_0"]
        assert len(rows) == 4
        assert rows[2][0] == "0.5"
        assert rows[1][-1] == "0.5"
        assert rows[3][-1] == ""

    def test_round_trip_precision(self):
        """17 significant digits read back to the same double."""
        assert format_number(0.1) == "0.10000000000000001"
        assert float(format_number(np.pi)) == np.pi


class TestRunArtifacts:
    """Test cases for the files written after a run."""

    def test_files(self, result, tmp_path):
        """A run writes the trajectory, solution and timing files in that order."""
        paths = write_run_artifacts(result, tmp_path)
        assert [p.name for p in paths] == [TRAJECTORY_FILE, SOLUTION_FILE, TIMING_FILE]
        rows = _read_csv(tmp_path / TRAJECTORY_FILE)
        assert len(rows) == 6
        assert rows[0][:3] == ["t", "mean_x1", "mean_x2"]

    def test_solution_json(self, result, tmp_path):
        """solution.json and timing.json carry the documented keys."""
        write_run_artifacts(result, tmp_path)
        solution = json.loads((tmp_path / SOLUTION_FILE).read_text())
        assert solution["scenario"] == "obstacle"
        assert solution["mode"] == "open-loop"
        assert solution["n_basis"] == 6
        assert len(solution["u_star"]) == 4
        assert len(solution["margins"][0]) == 4
        timing = json.loads((tmp_path / TIMING_FILE).read_text())
        assert set(timing) == {"basis_s", "quadrature_s", "projection_s", "lifting_s", "solve_s", "total_s"}

    def test_reproducible(self, result, tmp_path):
        """Writing the same result twice gives byte-identical files."""
        write_run_artifacts(result, tmp_path / "a")
        write_run_artifacts(result, tmp_path / "b")
        for name in (TRAJECTORY_FILE, SOLUTION_FILE):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestRuleFiles:
    """Test cases for writing and re-importing quadrature rules."""

    def test_byte_identical_round_trip(self, rule, tmp_path):
        """A re-imported rule writes out to the same bytes."""
        first = write_rule(rule, tmp_path / "rule.json")
        loaded = load_rule(first)
        second = write_rule(loaded, tmp_path / "again.json")
        assert first.read_bytes() == second.read_bytes()
        np.testing.assert_array_equal(loaded.nodes, rule.nodes)
        np.testing.assert_array_equal(loaded.weights, rule.weights)
        assert loaded.basis2p_id == rule.basis2p_id

    def test_rejects_other_json(self, tmp_path):
        """JSON that is not a rule fails validation."""
        path = tmp_path / "other.json"
        path.write_text('{"d": 2}')
        with pytest.raises(ConfigError):
            load_rule(path)

    def test_rejects_invalid_json(self, tmp_path):
        """Unparseable JSON is a config error."""
        path = tmp_path / "broken.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_rule(path)


class TestBasisExport:
    """Test cases for the basis artifact."""

    def test_fields(self, basis):
        """Multi-indices come in graded-lex order with a small Gram residual."""
        exported = basis_export(basis)
        assert exported.order[:3] == [[0, 0], [1, 0], [0, 1]]
        assert exported.gram_residual <= 1e-8
        assert len(exported.coeffs) == 6


class TestClosedLoopMargins:
    """Test cases for per-step chance margins of a closed loop."""

    def test_inactive_steps_are_nan(self):
        """Only active times get a margin; step 0 is never scored."""
        con = AffineConstraint(a=np.array([1.0]), b=-1.0, beta=0.8, active_times=(2,))
        states = [
            CoeffVector.deterministic([0.0], 2),
            CoeffVector.deterministic([3.0], 2),
            CoeffVector.deterministic([0.5], 2),
        ]
        table = closed_loop_margins(states, [con])
        assert table.shape == (1, 2)
        assert np.isnan(table[0, 0])
        assert table[0, 1] == pytest.approx(-0.5, abs=1e-5)
