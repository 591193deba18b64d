"""
Basis service layer for monomial orderings and orthonormal polynomial bases.
Builds the basis by Gram-Schmidt in exact moment space and evaluates it.
"""
import logging
from typing import Iterator

import numpy as np
from scipy.linalg import solve_triangular

from src.config import settings
from src.errors import DegenerateMeasure, DimensionMismatch, ToleranceNotMet
from src.models.basis import MonomialOrder, OrthonormalBasis
from src.models.mixture import MultiIndex
from src.services.uncertainty_service import MomentOracle

logger = logging.getLogger(__name__)


def _compositions(total: int, d: int) -> Iterator[MultiIndex]:
    # xi_1 has the highest priority: larger leading exponents come first
    if d == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, d - 1):
            yield (first,) + rest


def graded_lex_indices(d: int, p: int) -> MonomialOrder:
    """
    All multi-indices with total degree <= p, ordered by degree then lexicographically.

    Args:
        d: Number of parameters (>= 1)
        p: Maximum total degree (>= 0)

    Returns:
        MonomialOrder of length (p + d)! / (p! d!)
    """
    indices = tuple(alpha for degree in range(p + 1) for alpha in _compositions(degree, d))
    return MonomialOrder(indices=indices, d=d, p=p)


def moment_gram_matrix(oracle: MomentOracle, order: MonomialOrder) -> np.ndarray:
    """G[a, b] = E[p_a p_b] for the monomials of the order."""
    exps = order.exponents
    size = order.size
    gram = np.empty((size, size))
    for a in range(size):
        for b in range(a, size):
            gram[a, b] = gram[b, a] = oracle.moment(tuple(exps[a] + exps[b]))
    return gram


def _orthogonalize(coeffs: np.ndarray, gram: np.ndarray, k: int, vector: np.ndarray) -> np.ndarray:
    # Modified Gram-Schmidt against rows 0..k-1, applied twice
    for _ in range(2):
        for i in range(k):
            vector = vector - (coeffs[i] @ gram @ vector) * coeffs[i]
    return vector


def _sweep(coeffs: np.ndarray, gram: np.ndarray, vectors: np.ndarray, tol: float) -> np.ndarray:
    for k in range(1, coeffs.shape[0]):
        vector = _orthogonalize(coeffs, gram, k, vectors[k])
        norm_sq = float(vector @ gram @ vector)
        if norm_sq <= tol ** 2:
            raise DegenerateMeasure(
                f"Basis polynomial {k + 1} has squared norm {norm_sq:.3g}; "
                "the measure is concentrated on a lower-degree variety"
            )
        coeffs[k] = vector / np.sqrt(norm_sq)
    return np.tril(coeffs)


def gram_residual(coeffs: np.ndarray, gram: np.ndarray) -> float:
    """max |E[Psi_i Psi_j] - delta_ij| evaluated from the coefficient representation."""
    return float(np.abs(coeffs @ gram @ coeffs.T - np.eye(coeffs.shape[0])).max())


def gram_schmidt(oracle: MomentOracle, d: int, p: int, tol: float = settings.gram_tol) -> OrthonormalBasis:
    """
    Orthonormal basis {Psi_k} of total degree <= p under the oracle's measure.

    Args:
        oracle: Moment oracle supporting degree 2p
        d: Number of parameters
        p: Maximum total degree
        tol: Orthonormality tolerance

    Returns:
        OrthonormalBasis with lower-triangular coefficients and Psi_1 = 1

    Raises:
        DegenerateMeasure: If a new polynomial has squared norm <= tol^2
        ToleranceNotMet: If a re-orthogonalization sweep still leaves residual > tol
    """
    if tol <= 0:
        raise ValueError("Gram-Schmidt tolerance must be positive")
    if oracle.dimension != d:
        raise DimensionMismatch(f"Oracle has dimension {oracle.dimension}, expected {d}")

    order = graded_lex_indices(d, p)
    gram = moment_gram_matrix(oracle, order)

    coeffs = np.zeros((order.size, order.size))
    coeffs[0, 0] = 1.0
    coeffs = _sweep(coeffs, gram, np.eye(order.size), tol)
    residual = gram_residual(coeffs, gram)

    if residual > tol:
        logger.debug(f"Gram residual {residual:.3g} above {tol:.1g}; re-orthogonalizing")
        coeffs = _sweep(coeffs, gram, coeffs.copy(), tol)
        residual = gram_residual(coeffs, gram)
        if residual > tol:
            raise ToleranceNotMet(f"Gram residual {residual:.3g} exceeds tolerance {tol:.1g}")

    logger.info(f"Built orthonormal basis d={d} p={p} N={order.size} residual={residual:.2e}")
    return OrthonormalBasis(coeffs=coeffs, order=order, gram_residual=residual)


def _power_table(points: np.ndarray, p: int) -> np.ndarray:
    # powers[n, i, k] = points[n, i]^k built by repeated multiplication
    powers = np.ones(points.shape + (p + 1,))
    for k in range(1, p + 1):
        powers[:, :, k] = powers[:, :, k - 1] * points
    return powers


def _check_points(points: np.ndarray, d: int) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.ndim != 2 or points.shape[1] != d:
        raise DimensionMismatch(f"Points have shape {points.shape}, expected (n, {d})")
    return points


def monomial_values(order: MonomialOrder, points: np.ndarray) -> np.ndarray:
    """Monomials of the order at each point, shape (n, N)."""
    points = _check_points(points, order.d)
    exps = order.exponents
    factors = _power_table(points, order.p)[:, np.arange(order.d)[None, :], exps]
    return np.prod(factors, axis=2)


def monomial_gradients(order: MonomialOrder, points: np.ndarray) -> np.ndarray:
    """d p_m / d xi_i at each point, shape (n, N, d)."""
    points = _check_points(points, order.d)
    exps = order.exponents
    dims = np.arange(order.d)[None, :]
    powers = _power_table(points, order.p)
    factors = powers[:, dims, exps]
    lowered = powers[:, dims, np.maximum(exps - 1, 0)] * exps
    grads = np.empty(factors.shape)
    for i in range(order.d):
        others = np.prod(np.delete(factors, i, axis=2), axis=2)
        grads[:, :, i] = lowered[:, :, i] * others
    return grads


def evaluate_basis(basis: OrthonormalBasis, x: np.ndarray) -> np.ndarray:
    """
    Values (Psi_1(x), ..., Psi_Np(x)).

    Raises:
        DimensionMismatch: If x does not have dimension d
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (basis.d,):
        raise DimensionMismatch(f"Point has shape {x.shape}, expected ({basis.d},)")
    return evaluate_basis_batch(basis, x[None, :])[0]


def evaluate_basis_batch(basis: OrthonormalBasis, points: np.ndarray) -> np.ndarray:
    """Row-wise basis values, shape (n, N_p)."""
    return monomial_values(basis.order, points) @ basis.coeffs.T


def evaluate_basis_gradient(basis: OrthonormalBasis, points: np.ndarray) -> np.ndarray:
    """d Psi_k / d xi_i at each point, shape (n, N_p, d)."""
    return np.einsum("km,nmi->nki", basis.coeffs, monomial_gradients(basis.order, points))


def project_polynomial(basis: OrthonormalBasis, monomial_coeffs: np.ndarray) -> np.ndarray:
    """Basis coefficients of sum_m monomial_coeffs[m] p_m (degree <= p)."""
    monomial_coeffs = np.asarray(monomial_coeffs, dtype=float)
    return solve_triangular(basis.coeffs.T, monomial_coeffs, lower=False)


def to_monomials(basis: OrthonormalBasis, basis_coeffs: np.ndarray) -> np.ndarray:
    """Monomial coefficients of sum_k basis_coeffs[k] Psi_k."""
    return basis.coeffs.T @ np.asarray(basis_coeffs, dtype=float)
