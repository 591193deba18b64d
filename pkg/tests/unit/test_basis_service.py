"""
Unit tests for the basis service.
Tests monomial ordering, Gram-Schmidt orthonormalization and basis evaluation.
"""
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.errors import DegenerateMeasure, DimensionMismatch
from src.services.basis_service import (
    evaluate_basis,
    evaluate_basis_batch,
    evaluate_basis_gradient,
    graded_lex_indices,
    gram_schmidt,
    moment_gram_matrix,
    monomial_values,
    project_polynomial,
    to_monomials,
)
from src.services.uncertainty_service import mixture_new, moment_oracle, sample


class TestGradedLexIndices:
    """Test cases for the monomial ordering."""

    @pytest.mark.parametrize("d,p", [(1, 0), (1, 4), (2, 2), (3, 3), (4, 2)])
    def test_size(self, d, p):
        """The index set has C(p + d, d) entries."""
        assert graded_lex_indices(d, p).size == comb(p + d, d)

    def test_two_parameters_degree_two(self):
        """Degree first, then the first coordinate's exponent decreasing."""
        order = graded_lex_indices(2, 2)
        assert order.indices == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

    def test_degrees_nondecreasing(self):
        """Total degree never decreases along the ordering."""
        degrees = graded_lex_indices(3, 4).degrees
        assert np.all(np.diff(degrees) >= 0)

    def test_position_lookup(self):
        """Every multi-index maps back to its position; unknown ones raise."""
        order = graded_lex_indices(3, 2)
        for k, alpha in enumerate(order.indices):
            assert order.position(alpha) == k
        with pytest.raises(KeyError):
            order.position((3, 0, 0))


class TestGramSchmidt:
    """Test cases for orthonormal basis construction."""

    def test_hermite_polynomials(self, standard_normal):
        """Under N(0, 1) the basis is the normalized probabilists' Hermite family."""
        basis = gram_schmidt(moment_oracle(standard_normal, 2), 1, 3)
        expected = np.array([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [-1.0 / np.sqrt(2.0), 0.0, 1.0 / np.sqrt(2.0), 0.0],
            [0.0, -3.0 / np.sqrt(6.0), 0.0, 1.0 / np.sqrt(6.0)],
        ])
        np.testing.assert_allclose(basis.coeffs, expected, atol=1e-12)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_gram_residual(self, mixture, p):
        """Analytic Gram residual of the shipped mixture is at most 1e-8."""
        oracle = moment_oracle(mixture, p)
        basis = gram_schmidt(oracle, 2, p)
        assert basis.gram_residual <= 1e-8
        gram = moment_gram_matrix(oracle, basis.order)
        np.testing.assert_allclose(basis.coeffs @ gram @ basis.coeffs.T, np.eye(basis.size), atol=1e-8)

    def test_structure(self, basis):
        """Lower-triangular coefficients and Psi_1 = 1."""
        assert basis.size == 6
        np.testing.assert_array_equal(basis.coeffs, np.tril(basis.coeffs))
        np.testing.assert_array_equal(basis.coeffs[0], np.eye(6)[0])
        assert np.all(np.diag(basis.coeffs) > 0)

    def test_fingerprint_is_stable(self, mixture, basis):
        """Rebuilding from the same moments gives the same fingerprint."""
        rebuilt = gram_schmidt(moment_oracle(mixture, 2), 2, 2)
        assert rebuilt.fingerprint == basis.fingerprint
        assert basis.fingerprint.startswith("d2-p2-")

    def test_point_mass_is_degenerate(self):
        """A zero-variance measure has no degree-one polynomial of positive norm."""
        point_mass = mixture_new([(1.0, [1.0], [[0.0]])])
        with pytest.raises(DegenerateMeasure):
            gram_schmidt(moment_oracle(point_mass, 1), 1, 1)

    def test_nonpositive_tolerance(self, mixture):
        """A zero tolerance is rejected."""
        with pytest.raises(ValueError):
            gram_schmidt(moment_oracle(mixture, 1), 2, 1, tol=0.0)

    def test_dimension_mismatch(self, mixture):
        """A moment oracle of the wrong dimension is rejected."""
        with pytest.raises(DimensionMismatch):
            gram_schmidt(moment_oracle(mixture, 1), 3, 1)

    @pytest.mark.slow
    def test_empirical_orthonormality(self, mixture, basis):
        """Sample Gram matrix deviates from I by at most 5 standard errors entrywise."""
        values = evaluate_basis_batch(basis, sample(mixture, 1_000_000, 21).points)
        products = values[:, :, None] * values[:, None, :]
        mean = products.mean(axis=0)
        stderr = products.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
        assert np.all(np.abs(mean - np.eye(basis.size)) <= 5 * stderr + 1e-12)

    @settings(max_examples=20, deadline=None)
    @given(
        shift=st.floats(-1.0, 1.0),
        var=st.floats(0.3, 1.0),
        corr=st.floats(-0.6, 0.6),
        weight=st.floats(0.2, 0.8),
    )
    def test_orthonormal_for_random_mixtures(self, shift, var, corr, weight):
        """Correlated two-component mixtures all give an orthonormal basis."""
        cov = [[var, corr * var], [corr * var, var]]
        gm = mixture_new([(weight, [shift, -shift], cov), (1.0 - weight, [-shift, shift], np.eye(2) * 0.5)])
        basis = gram_schmidt(moment_oracle(gm, 2), 2, 2)
        assert basis.gram_residual <= 1e-8


class TestEvaluateBasis:
    """Test cases for basis evaluation, gradients and projections."""

    def test_constant_first_entry(self, basis, rng):
        """Psi_1 evaluates to one everywhere."""
        for x in rng.normal(size=(5, 2)):
            assert evaluate_basis(basis, x)[0] == pytest.approx(1.0)

    def test_batch_matches_single(self, basis, rng):
        """Batch evaluation agrees with pointwise evaluation."""
        points = rng.normal(size=(7, 2))
        batch = evaluate_basis_batch(basis, points)
        assert batch.shape == (7, 6)
        for row, x in zip(batch, points):
            np.testing.assert_allclose(row, evaluate_basis(basis, x), rtol=1e-13, atol=1e-13)

    def test_monomials_at_point(self):
        """Monomials come out in graded-lex order."""
        order = graded_lex_indices(2, 2)
        values = monomial_values(order, np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(values[0], [1.0, 2.0, 3.0, 4.0, 6.0, 9.0])

    def test_gradient_matches_finite_differences(self, basis, rng):
        """Analytic basis gradients match central differences."""
        points = rng.normal(size=(4, 2))
        grads = evaluate_basis_gradient(basis, points)
        h = 1e-6
        for i in range(2):
            step = np.zeros(2)
            step[i] = h
            fd = (evaluate_basis_batch(basis, points + step) - evaluate_basis_batch(basis, points - step)) / (2 * h)
            np.testing.assert_allclose(grads[:, :, i], fd, rtol=1e-6, atol=1e-7)

    def test_projection_reproduces_polynomials(self, basis, rng):
        """A degree-p polynomial is reproduced exactly by its basis coefficients."""
        monomial = rng.normal(size=basis.size)
        coeffs = project_polynomial(basis, monomial)
        points = rng.normal(size=(10, 2))
        np.testing.assert_allclose(
            evaluate_basis_batch(basis, points) @ coeffs,
            monomial_values(basis.order, points) @ monomial,
            rtol=1e-10,
            atol=1e-10,
        )
        np.testing.assert_allclose(to_monomials(basis, coeffs), monomial, atol=1e-12)

    def test_wrong_dimension(self, basis):
        """Points of the wrong dimension are rejected."""
        with pytest.raises(DimensionMismatch):
            evaluate_basis(basis, [0.0, 0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            evaluate_basis_batch(basis, np.zeros((3, 1)))
