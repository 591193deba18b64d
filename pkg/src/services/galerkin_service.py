"""
Galerkin service layer.
Projects parameter-dependent systems onto the orthonormal basis and works
with the lifted coefficient trajectories.
"""
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import DegreeOverflow, DimensionMismatch
from src.models.basis import OrthonormalBasis
from src.models.mixture import SampleBatch
from src.models.quadrature import QuadratureRule
from src.models.system import CoeffVector, GalerkinSystem, ParametricMatrix, PolyMatrix, StochasticLTI
from src.services.basis_service import evaluate_basis_batch
from src.services.uncertainty_service import MomentOracle

logger = logging.getLogger(__name__)

VectorFunction = Union[ParametricMatrix, Callable[[np.ndarray], np.ndarray]]


def _check_inputs(sys: StochasticLTI, basis: OrthonormalBasis, rule: QuadratureRule) -> None:
    if not sys.d == basis.d == rule.d:
        raise DimensionMismatch(
            f"System (d={sys.d}), basis (d={basis.d}) and rule (d={rule.d}) disagree on the parameter dimension"
        )
    degree = sys.max_degree
    if degree is not None and degree + basis.p > rule.exactness_degree:
        raise DegreeOverflow(
            f"Entry degree {degree} plus basis degree {basis.p} exceeds rule exactness {rule.exactness_degree}"
        )


def _project(matrix: ParametricMatrix, psi: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    values = matrix.evaluate_batch(rule.nodes)
    n_basis = psi.shape[1]
    rows, cols = matrix.shape
    blocks = np.einsum("l,lj,lk,lab->jakb", rule.weights, psi, psi, values)
    return blocks.reshape(n_basis * rows, n_basis * cols)


def gramian_v(basis: OrthonormalBasis, rule: QuadratureRule) -> np.ndarray:
    """
    Quadrature Gramian v_ij = sum_l Psi_i(xi_l) Psi_j(xi_l) w_l.

    Only the upper triangle is summed; the lower triangle is its mirror, so
    the result is exactly symmetric.
    """
    psi = evaluate_basis_batch(basis, rule.nodes)
    gram = np.einsum("l,li,lj->ij", rule.weights, psi, psi)
    upper = np.triu(gram)
    return upper + np.triu(gram, k=1).T


def project_matrices(sys: StochasticLTI, basis: OrthonormalBasis, rule: QuadratureRule) -> GalerkinSystem:
    """
    Assemble the lifted system by quadrature.

    Args:
        sys: Parameter-dependent system
        basis: Order-p orthonormal basis
        rule: Rule exact to degree 2p over the same measure

    Returns:
        GalerkinSystem whose (j, k) block of A_hat is sum_l w_l Psi_k Psi_j A(xi_l)

    Raises:
        DimensionMismatch: If parameter dimensions disagree
        DegreeOverflow: If entry degree + p exceeds the rule's exactness degree

    Note:
        Systems with non-polynomial entries (per-node ZOH) skip the degree check.
    """
    _check_inputs(sys, basis, rule)
    psi = evaluate_basis_batch(basis, rule.nodes)

    A_hat = _project(sys.A, psi, rule)
    B_hat = _project(sys.B, psi, rule)
    D_hat = _project(sys.D, psi, rule) if sys.D is not None else None

    logger.info(
        f"Projected system n_x={sys.n_x} onto N_p={basis.size} with M={rule.size} nodes "
        f"(lifted dimension {A_hat.shape[0]})"
    )
    return GalerkinSystem(
        A_hat=A_hat,
        B_hat=B_hat,
        D_hat=D_hat,
        V=gramian_v(basis, rule),
        basis=basis,
        rule=rule,
        n_x=sys.n_x,
        n_u=sys.n_u,
        n_w=sys.n_w,
    )


def _analytic_products(basis: OrthonormalBasis, oracle: MomentOracle, alpha: np.ndarray) -> np.ndarray:
    # E[xi^alpha Psi_j Psi_k] = C M_alpha C^T with M_alpha[m, n] = E[xi^(alpha + e_m + e_n)]
    exps = basis.order.exponents
    size = basis.size
    moments = np.empty((size, size))
    for m in range(size):
        for n in range(m, size):
            moments[m, n] = moments[n, m] = oracle.moment(tuple(alpha + exps[m] + exps[n]))
    return basis.coeffs @ moments @ basis.coeffs.T


def _project_analytic(matrix: PolyMatrix, basis: OrthonormalBasis, oracle: MomentOracle) -> np.ndarray:
    rows, cols = matrix.shape
    blocks = np.zeros((basis.size, rows, basis.size, cols))
    for alpha, coeff in zip(matrix.exponents, matrix.coefficients):
        products = _analytic_products(basis, oracle, alpha)
        blocks += np.einsum("jk,ab->jakb", products, coeff)
    return blocks.reshape(basis.size * rows, basis.size * cols)


def project_matrices_analytic(sys: StochasticLTI, basis: OrthonormalBasis, oracle: MomentOracle) -> GalerkinSystem:
    """
    Lifted system from exact moments instead of a quadrature rule.

    Serves as the reference the quadrature projection is checked against.

    Raises:
        TypeError: If any system matrix is not a PolyMatrix
        DegreeOverflow: If the oracle cannot reach entry degree + 2p
    """
    matrices = [m for m in (sys.A, sys.B, sys.D) if m is not None]
    if not all(isinstance(m, PolyMatrix) for m in matrices):
        raise TypeError("Analytic projection needs polynomial system matrices")
    if sys.d != basis.d:
        raise DimensionMismatch(f"System has d={sys.d}, basis d={basis.d}")

    zero = np.zeros(basis.d, dtype=int)
    return GalerkinSystem(
        A_hat=_project_analytic(sys.A, basis, oracle),
        B_hat=_project_analytic(sys.B, basis, oracle),
        D_hat=_project_analytic(sys.D, basis, oracle) if sys.D is not None else None,
        V=_analytic_products(basis, oracle, zero),
        basis=basis,
        rule=None,
        n_x=sys.n_x,
        n_u=sys.n_u,
        n_w=sys.n_w,
    )


def expand_function(f: VectorFunction, basis: OrthonormalBasis, rule: QuadratureRule) -> CoeffVector:
    """
    Galerkin coefficients of a vector-valued function of xi.

    Args:
        f: Either a ParametricMatrix with one column (e.g. a polynomial vector)
            or a callable mapping a single xi to a vector
        basis: Orthonormal basis
        rule: Quadrature rule

    Returns:
        CoeffVector whose block k is sum_l f(xi_l) Psi_k(xi_l) w_l
    """
    if isinstance(f, ParametricMatrix):
        values = f.evaluate_batch(rule.nodes).reshape(rule.size, -1)
    else:
        values = np.stack([np.atleast_1d(np.asarray(f(xi), dtype=float)) for xi in rule.nodes])
    psi = evaluate_basis_batch(basis, rule.nodes)
    blocks = np.einsum("l,lk,ln->kn", rule.weights, psi, values)
    return CoeffVector.from_blocks(blocks)


def lift_input(u: np.ndarray, n_basis: int) -> CoeffVector:
    """Deterministic input: block 1 carries u, higher blocks are zero."""
    return CoeffVector.deterministic(u, n_basis)


def _check_vector(vector: CoeffVector, base_dim: int, n_basis: int, name: str) -> None:
    if vector.base_dim != base_dim or vector.n_basis != n_basis:
        raise DimensionMismatch(
            f"{name} has {vector.n_basis} blocks of size {vector.base_dim}, expected {n_basis} of size {base_dim}"
        )


def propagate(
    gs: GalerkinSystem,
    x0: CoeffVector,
    u_hat: Sequence[CoeffVector],
    w_hat: Optional[Sequence[CoeffVector]],
    T: int,
) -> Tuple[CoeffVector, ...]:
    """
    Iterate x_hat_{t+1} = A_hat x_hat_t + B_hat u_hat_t + D_hat w_hat_t.

    Args:
        gs: Lifted system
        x0: Initial coefficients
        u_hat: T lifted inputs
        w_hat: T lifted disturbances, or None for no disturbance
        T: Horizon

    Returns:
        x_hat_0 .. x_hat_T

    Raises:
        DimensionMismatch: On sequence length or block size mismatches
    """
    n_basis = gs.n_basis
    _check_vector(x0, gs.n_x, n_basis, "Initial state")
    if len(u_hat) != T:
        raise DimensionMismatch(f"Expected {T} inputs, got {len(u_hat)}")
    if w_hat is not None:
        if gs.D_hat is None:
            raise DimensionMismatch("System has no disturbance channel")
        if len(w_hat) != T:
            raise DimensionMismatch(f"Expected {T} disturbances, got {len(w_hat)}")

    states = [x0]
    x = x0.coeffs
    for t in range(T):
        _check_vector(u_hat[t], gs.n_u, n_basis, f"Input {t}")
        x = gs.A_hat @ x + gs.B_hat @ u_hat[t].coeffs
        if w_hat is not None:
            _check_vector(w_hat[t], gs.n_w, n_basis, f"Disturbance {t}")
            x = x + gs.D_hat @ w_hat[t].coeffs
        states.append(CoeffVector(coeffs=x, base_dim=gs.n_x))
    return tuple(states)


def mean_var(x_hat: CoeffVector) -> Tuple[np.ndarray, np.ndarray]:
    """Componentwise mean (block 1) and variance (sum of squared higher blocks)."""
    blocks = x_hat.blocks
    return blocks[0].copy(), np.sum(blocks[1:] ** 2, axis=0)


def sample_surrogate(
    x_hat: CoeffVector,
    basis: OrthonormalBasis,
    points: Union[SampleBatch, np.ndarray],
) -> np.ndarray:
    """
    Evaluate the truncated expansion at parameter samples.

    Returns:
        (n, base_dim) array; row i is sum_k c_k Psi_k(xi_i)

    Raises:
        DimensionMismatch: If the samples or coefficients do not fit the basis
    """
    if isinstance(points, SampleBatch):
        points = points.points
    if x_hat.n_basis != basis.size:
        raise DimensionMismatch(f"Coefficients have {x_hat.n_basis} blocks, basis has {basis.size}")
    return evaluate_basis_batch(basis, points) @ x_hat.blocks


def simulate_deterministic(
    A: np.ndarray,
    B: np.ndarray,
    x0: np.ndarray,
    u: np.ndarray,
    D: Optional[np.ndarray] = None,
    w: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Plain x_{t+1} = A x_t + B u_t (+ D w_t); returns the (T+1, n_x) trajectory.

    u has one row per step; w is either one row per step or a single row held constant.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if w is not None:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if w.shape[0] == 1:
            w = np.repeat(w, u.shape[0], axis=0)
    states = [np.asarray(x0, dtype=float)]
    for t in range(u.shape[0]):
        x = A @ states[-1] + B @ u[t]
        if D is not None and w is not None:
            x = x + D @ w[t]
        states.append(x)
    return np.stack(states)
