"""
Unit tests for the Galerkin service.
Tests projection, the quadrature Gramian, function expansion and lifted propagation.
"""
import numpy as np
import pytest

from src.errors import DegreeOverflow, DimensionMismatch
from src.models.quadrature import QuadConfig
from src.models.system import CoeffVector, PolyMatrix, StochasticLTI
from src.services.basis_service import evaluate_basis_batch, gram_schmidt, monomial_values, project_polynomial
from src.services.galerkin_service import (
    expand_function,
    gramian_v,
    lift_input,
    mean_var,
    project_matrices,
    project_matrices_analytic,
    propagate,
    sample_surrogate,
    simulate_deterministic,
)
from src.services.quadrature_service import generate
from src.services.scenario_service import obstacle_system, scenario_vehicle
from src.services.uncertainty_service import moment_oracle, sample

NOMINAL_A = np.array([[0.9, 0.1], [0.1, 0.85]])
NOMINAL_B = np.array([[0.25], [0.75]])


def _blocks(matrix: np.ndarray, n_basis: int, rows: int, cols: int) -> np.ndarray:
    """(j, a, k, b) view of a lifted matrix."""
    return matrix.reshape(n_basis, rows, n_basis, cols)


class TestGramianV:
    """Test cases for the quadrature Gramian."""

    def test_identity_for_exact_rule(self, basis, rule):
        """An exact rule integrates Psi_j Psi_k to the identity."""
        V = gramian_v(basis, rule)
        assert np.abs(V - np.eye(basis.size)).max() <= 1e-7

    def test_exactly_symmetric(self, basis, rule):
        """The Gramian is symmetric bit for bit."""
        V = gramian_v(basis, rule)
        np.testing.assert_array_equal(V, V.T)


class TestProjectMatrices:
    """Test cases for quadrature and analytic projection."""

    def test_constant_matrix_lifts_to_kronecker(self, basis, rule):
        """A xi-independent A gives A_hat = V (x) A, block diagonal up to round-off."""
        A = np.array([[0.9, 0.1], [0.1, 0.85]])
        B = np.array([[0.25], [0.75]])
        sys = StochasticLTI(A=PolyMatrix.constant(A, 2), B=PolyMatrix.constant(B, 2))
        gs = project_matrices(sys, basis, rule)
        np.testing.assert_allclose(gs.A_hat, np.kron(gs.V, A), atol=1e-12)
        np.testing.assert_allclose(gs.A_hat, np.kron(np.eye(basis.size), A), atol=1e-7)
        assert gs.A_hat.shape == (12, 12)
        assert gs.B_hat.shape == (12, 6)
        assert gs.D_hat is None

    def test_matches_analytic_projection(self, mixture, basis, rule):
        """Blocks whose integrand degree is within the rule's exactness agree with exact moments."""
        sys = obstacle_system((0.3, 0.5))
        quad = project_matrices(sys, basis, rule)
        exact = project_matrices_analytic(sys, basis, moment_oracle(mixture, 2))
        degrees = basis.degrees
        quad_blocks = _blocks(quad.A_hat, basis.size, 2, 2)
        exact_blocks = _blocks(exact.A_hat, basis.size, 2, 2)
        for j in range(basis.size):
            for k in range(basis.size):
                if degrees[j] + degrees[k] + 1 <= rule.exactness_degree:
                    np.testing.assert_allclose(quad_blocks[j, :, k, :], exact_blocks[j, :, k, :], atol=1e-7)
        assert exact.rule is None
        assert np.abs(exact.V - np.eye(basis.size)).max() <= 1e-8

    def test_degree_overflow(self, basis, rule):
        """An entry of degree 3 with a p = 2 basis needs a rule exact to degree 5."""
        cubic = PolyMatrix.from_terms({(3, 0): [[1.0]]}, shape=(1, 1), d=2)
        sys = StochasticLTI(A=cubic, B=PolyMatrix.constant([[1.0]], 2))
        with pytest.raises(DegreeOverflow):
            project_matrices(sys, basis, rule)

    def test_dimension_mismatch(self, basis, rule):
        """A system in three parameters does not match a two-parameter basis."""
        sys = StochasticLTI(A=PolyMatrix.constant([[1.0]], 3), B=PolyMatrix.constant([[1.0]], 3))
        with pytest.raises(DimensionMismatch):
            project_matrices(sys, basis, rule)

    def test_analytic_needs_polynomials(self, basis):
        """Analytic projection only accepts polynomial matrices."""
        vehicle = scenario_vehicle()
        with pytest.raises(TypeError):
            project_matrices_analytic(vehicle.system, basis, moment_oracle(vehicle.mixture, 2))

    def test_disturbance_channel(self, basis, rule):
        """The disturbance channel lifts to D_hat with n_w recorded."""
        sys = StochasticLTI(
            A=PolyMatrix.constant(np.eye(2), 2),
            B=PolyMatrix.constant([[1.0], [0.0]], 2),
            D=PolyMatrix.constant(np.eye(2), 2),
            omega=PolyMatrix.from_entries([[[((1, 0), 1.0)]], [[((0, 1), 1.0)]]], d=2),
        )
        gs = project_matrices(sys, basis, rule)
        assert gs.D_hat.shape == (12, 12)
        assert gs.n_w == 2


class TestExpandFunction:
    """Test cases for Galerkin coefficients of functions of xi."""

    def test_polynomial_matches_projection(self, basis, rule):
        """Coefficients of a degree-2 polynomial equal its exact basis projection."""
        monomial = np.array([1.0, 2.0, 0.0, 0.0, 0.5, -1.0])
        coeffs = expand_function(lambda xi: monomial_values(basis.order, xi[None, :])[0] @ monomial, basis, rule)
        np.testing.assert_allclose(coeffs.coeffs, project_polynomial(basis, monomial), atol=1e-7)

    def test_poly_matrix_and_callable_agree(self, basis, rule):
        """PolyMatrix and callable inputs expand to the same coefficients."""
        f = PolyMatrix.from_entries([[[((0, 0), 1.0), ((1, 0), 2.0)]], [[((1, 1), 1.0)]]], d=2)
        from_poly = expand_function(f, basis, rule)
        from_callable = expand_function(lambda xi: f.evaluate(xi)[:, 0], basis, rule)
        np.testing.assert_allclose(from_poly.coeffs, from_callable.coeffs, atol=1e-14)
        assert from_poly.base_dim == 2
        assert from_poly.n_basis == basis.size

    def test_constant_is_deterministic(self, basis, rule):
        """A constant function lives in the first block."""
        coeffs = expand_function(lambda xi: np.array([20.0, 10.0]), basis, rule)
        np.testing.assert_allclose(coeffs.blocks[0], [20.0, 10.0], atol=1e-6)
        np.testing.assert_allclose(coeffs.blocks[1:], 0.0, atol=1e-6)


class TestPropagate:
    """Test cases for lifted simulation and its statistics."""

    def test_zero_uncertainty_matches_deterministic(self, mixture, basis):
        """With rho = 0 the first block follows the nominal simulation to 1e-12."""
        gs = project_matrices_analytic(obstacle_system((0.0, 0.0)), basis, moment_oracle(mixture, 2))
        x0 = CoeffVector.deterministic([20.0, 10.0], basis.size)
        u = np.array([[0.5], [-0.5], [0.25], [0.0]])
        states = propagate(gs, x0, [lift_input(row, basis.size) for row in u], None, 4)
        nominal = simulate_deterministic(NOMINAL_A, NOMINAL_B, [20.0, 10.0], u)
        assert len(states) == 5
        for t, state in enumerate(states):
            np.testing.assert_allclose(state.blocks[0], nominal[t], rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(state.blocks[1:], 0.0, atol=1e-12)

    def test_zero_uncertainty_with_quadrature(self, basis, rule):
        """The quadrature projection tracks the nominal simulation up to the rule residual."""
        gs = project_matrices(obstacle_system((0.0, 0.0)), basis, rule)
        x0 = CoeffVector.deterministic([20.0, 10.0], basis.size)
        u = np.array([[0.5], [-0.5], [0.25], [0.0]])
        states = propagate(gs, x0, [lift_input(row, basis.size) for row in u], None, 4)
        nominal = simulate_deterministic(NOMINAL_A, NOMINAL_B, [20.0, 10.0], u)
        for t, state in enumerate(states):
            np.testing.assert_allclose(state.blocks[0], nominal[t], rtol=1e-7)

    def test_superposition(self, basis, rule):
        """Lifted simulation is linear jointly in x0, inputs and disturbances."""
        sys = StochasticLTI(
            A=PolyMatrix.from_entries(
                [[[((0, 0), 0.9), ((1, 0), 0.1)], [((0, 0), 0.2)]], [[((0, 1), -0.1)], [((0, 0), 0.8)]]], d=2
            ),
            B=PolyMatrix.constant([[1.0], [0.5]], 2),
            D=PolyMatrix.constant(np.eye(2), 2),
            omega=PolyMatrix.from_entries([[[((1, 0), 1.0)]], [[((0, 1), 1.0)]]], d=2),
        )
        gs = project_matrices(sys, basis, rule)
        rng = np.random.default_rng(3)
        T, a, b = 4, 1.5, -0.75

        def draw():
            x0 = CoeffVector(coeffs=rng.standard_normal(2 * basis.size), base_dim=2)
            u = [CoeffVector(coeffs=rng.standard_normal(basis.size), base_dim=1) for _ in range(T)]
            w = [CoeffVector(coeffs=rng.standard_normal(2 * basis.size), base_dim=2) for _ in range(T)]
            return x0, u, w

        def combine(first, second):
            return CoeffVector(coeffs=a * first.coeffs + b * second.coeffs, base_dim=first.base_dim)

        (x0, u, w), (y0, v, z) = draw(), draw()
        mixed = propagate(
            gs, combine(x0, y0), [combine(p, q) for p, q in zip(u, v)], [combine(p, q) for p, q in zip(w, z)], T
        )
        first = propagate(gs, x0, u, w, T)
        second = propagate(gs, y0, v, z, T)
        for t in range(T + 1):
            np.testing.assert_allclose(
                mixed[t].coeffs, a * first[t].coeffs + b * second[t].coeffs, rtol=1e-12, atol=1e-12
            )

    def test_sequence_length_checked(self, basis, rule):
        """The number of inputs must equal the horizon."""
        gs = project_matrices(obstacle_system(), basis, rule)
        x0 = CoeffVector.deterministic([20.0, 10.0], basis.size)
        with pytest.raises(DimensionMismatch):
            propagate(gs, x0, [lift_input([0.0], basis.size)], None, 2)

    def test_block_size_checked(self, basis, rule):
        """The initial state block size must match n_x."""
        gs = project_matrices(obstacle_system(), basis, rule)
        with pytest.raises(DimensionMismatch):
            propagate(gs, CoeffVector.deterministic([1.0, 2.0, 3.0], basis.size), [], None, 0)

    def test_disturbance_without_channel(self, basis, rule):
        """Disturbances need a system with a D channel."""
        gs = project_matrices(obstacle_system(), basis, rule)
        x0 = CoeffVector.deterministic([20.0, 10.0], basis.size)
        w = [CoeffVector.deterministic([0.0], basis.size)]
        with pytest.raises(DimensionMismatch):
            propagate(gs, x0, [lift_input([0.0], basis.size)], w, 1)

    def test_mean_var(self):
        """Mean is block one; variance sums squares of the remaining blocks."""
        x_hat = CoeffVector.from_blocks(np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 1.0]]))
        mean, var = mean_var(x_hat)
        np.testing.assert_array_equal(mean, [1.0, 2.0])
        np.testing.assert_array_equal(var, [9.0, 17.0])

    def test_mean_var_matches_surrogate_samples(self, mixture, basis, rule):
        """Sample mean and variance of the expansion converge to mean_var."""
        f = PolyMatrix.from_entries([[[((1, 0), 1.0), ((0, 2), 0.5)]]], d=2)
        x_hat = expand_function(f, basis, rule)
        values = sample_surrogate(x_hat, basis, sample(mixture, 200_000, 4))
        mean, var = mean_var(x_hat)
        assert values.shape == (200_000, 1)
        assert values.mean() == pytest.approx(mean[0], abs=5 * np.sqrt(var[0] / values.shape[0]))
        assert values.var() == pytest.approx(var[0], rel=0.05)

    def test_sample_surrogate_evaluates_expansion(self, basis, rng):
        """Sampling evaluates the expansion at each point."""
        x_hat = CoeffVector.from_blocks(rng.normal(size=(basis.size, 3)))
        points = rng.normal(size=(6, 2))
        np.testing.assert_allclose(
            sample_surrogate(x_hat, basis, points), evaluate_basis_batch(basis, points) @ x_hat.blocks
        )

    def test_sample_surrogate_checks_blocks(self, basis):
        """Coefficient blocks must match the basis size."""
        x_hat = CoeffVector.from_blocks(np.zeros((3, 2)))
        with pytest.raises(DimensionMismatch):
            sample_surrogate(x_hat, basis, np.zeros((4, 2)))


class TestSimulateDeterministic:
    """Test cases for the zero-uncertainty simulator."""

    def test_scalar_integrator(self):
        """A unit integrator accumulates its inputs."""
        states = simulate_deterministic(np.eye(1), np.eye(1), [0.0], np.ones(3))
        np.testing.assert_array_equal(states[:, 0], [0.0, 1.0, 2.0, 3.0])

    def test_constant_disturbance(self):
        """A constant disturbance enters through D."""
        states = simulate_deterministic(np.eye(1), np.zeros((1, 1)), [0.0], np.zeros(2), D=np.eye(1), w=[[0.5]])
        np.testing.assert_array_equal(states[:, 0], [0.0, 0.5, 1.0])


def test_standard_normal_lifting_is_exact(standard_normal):
    """For scalar x_{t+1} = (1 + 0.1 xi) x_t the lifted mean matches E[(1 + 0.1 xi)^t]."""
    basis1 = gram_schmidt(moment_oracle(standard_normal, 3), 1, 3)
    basis6 = gram_schmidt(moment_oracle(standard_normal, 3), 1, 6)
    rule6 = generate(standard_normal, basis6, QuadConfig(seed=0))
    A = PolyMatrix.from_terms({(0,): [[1.0]], (1,): [[0.1]]}, shape=(1, 1), d=1)
    sys = StochasticLTI(A=A, B=PolyMatrix.constant([[0.0]], 1))
    gs = project_matrices(sys, basis1, rule6)
    x0 = CoeffVector.deterministic([1.0], basis1.size)
    states = propagate(gs, x0, [lift_input([0.0], basis1.size)] * 2, None, 2)
    mean, _ = mean_var(states[2])
    assert mean[0] == pytest.approx(1.0 + 0.01, abs=1e-8)
