"""
Quadrature service layer.
Fits nodes and weights to the exactness conditions of an order-2p basis by
block coordinate descent, then shrinks the rule by weighted clustering.
"""
import logging
from typing import Optional

import numpy as np

from src.errors import DimensionMismatch, NoExactRuleFound, Stalled, TooFewNodes
from src.models.basis import OrthonormalBasis
from src.models.mixture import GaussianMixture, MultiIndex
from src.models.quadrature import QuadConfig, QuadratureRule
from src.services.basis_service import evaluate_basis_batch, evaluate_basis_gradient
from src.services.uncertainty_service import sample

logger = logging.getLogger(__name__)

COINCIDENT_TOL = 1e-10
MAX_LM_ATTEMPTS = 12
# |w_a + w_b| below this fraction of |w_a| + |w_b| counts as cancelled
CANCELLATION_RTOL = 1e-8


def phi_matrix(basis2p: OrthonormalBasis, nodes: np.ndarray) -> np.ndarray:
    """Phi[k, l] = Psi_k(xi_l), shape (N_2p, M)."""
    return evaluate_basis_batch(basis2p, nodes).T


def exactness_residual(basis2p: OrthonormalBasis, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Phi(nodes) w - e_1."""
    residual = phi_matrix(basis2p, nodes) @ weights
    residual[0] -= 1.0
    return residual


def exactness_error(rule: QuadratureRule, basis2p: OrthonormalBasis) -> float:
    """max_k |sum_l Psi_k(xi_l) w_l - delta_1k|."""
    return float(np.abs(exactness_residual(basis2p, rule.nodes, rule.weights)).max())


def rule_moment(rule: QuadratureRule, alpha: MultiIndex) -> float:
    """Discrete moment sum_l xi_l^alpha w_l."""
    alpha = np.asarray(alpha, dtype=int)
    return float(rule.weights @ np.prod(rule.nodes ** alpha[None, :], axis=1))


def initial_rule(basis2p: OrthonormalBasis, gm: GaussianMixture, m: int, seed: int) -> QuadratureRule:
    """
    Unoptimized rule: m nodes drawn from the mixture with uniform weights.

    Args:
        basis2p: Order-2p basis the rule will be fit against
        gm: Parameter distribution
        m: Number of nodes (>= 1)
        seed: Sampling seed

    Returns:
        QuadratureRule whose residual is recorded but not necessarily small
    """
    if m < 1:
        raise ValueError(f"A quadrature rule needs at least one node, got {m}")
    if gm.dimension != basis2p.d:
        raise DimensionMismatch(f"Mixture has dimension {gm.dimension}, basis {basis2p.d}")
    nodes = sample(gm, m, seed).points
    weights = np.full(m, 1.0 / m)
    residual = np.linalg.norm(exactness_residual(basis2p, nodes, weights))
    return QuadratureRule(
        nodes=nodes,
        weights=weights,
        residual=float(residual),
        basis2p_id=basis2p.fingerprint,
        exactness_degree=basis2p.p,
    )


def _node_jacobian(basis2p: OrthonormalBasis, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # dF_k / dxi_{l,i} = w_l * dPsi_k/dxi_i (xi_l), columns ordered node-major
    grads = evaluate_basis_gradient(basis2p, nodes) * weights[:, None, None]
    m, n_basis, d = grads.shape
    return grads.transpose(1, 0, 2).reshape(n_basis, m * d)


def _levenberg_marquardt_step(
    basis2p: OrthonormalBasis,
    nodes: np.ndarray,
    weights: np.ndarray,
    residual: float,
    damping: float,
    min_step: float,
    F: np.ndarray,
):
    """One accepted LM step on the nodes, or the unchanged nodes if every trial fails."""
    J = _node_jacobian(basis2p, nodes, weights)
    JTJ = J.T @ J
    gradient = J.T @ F
    scale = max(float(np.mean(np.diag(JTJ))), 1e-12)

    for _ in range(MAX_LM_ATTEMPTS):
        lhs = JTJ + damping * scale * np.eye(JTJ.shape[0])
        try:
            step = -np.linalg.solve(lhs, gradient)
        except np.linalg.LinAlgError:
            damping *= 4.0
            continue
        if np.linalg.norm(step) < min_step:
            break
        trial = nodes + step.reshape(nodes.shape)
        trial_residual = float(np.linalg.norm(exactness_residual(basis2p, trial, weights)))
        if np.isfinite(trial_residual) and trial_residual < residual:
            return trial, trial_residual, damping / 3.0
        damping *= 4.0
    return nodes, residual, damping


def bcd_refine(
    rule: QuadratureRule,
    basis2p: OrthonormalBasis,
    cfg: Optional[QuadConfig] = None,
    stop_tol: Optional[float] = None,
    max_iters: Optional[int] = None,
) -> QuadratureRule:
    """
    Minimize ||Phi(nodes) w - e_1||_2 by alternating weight and node blocks.

    The weight block is a linear least-squares solve with nodes fixed; the node
    block is one Levenberg-Marquardt step with weights fixed. Steps that do not
    lower the residual are rejected, so the residual never increases. Below
    exactness_tol the loop keeps going until stop_tol or a stall.

    Args:
        rule: Starting rule
        basis2p: Order-2p basis over the same measure
        cfg: Generation settings
        stop_tol: Residual at which to stop (default cfg.polish_tol)
        max_iters: Iteration budget (default cfg.bcd_max_iters)

    Returns:
        Refined rule; its residual may still exceed the tolerance if the
        iteration budget was reached

    Raises:
        Stalled: If the residual improves by less than stall_rtol for
            stall_patience consecutive iterations while above tolerance
    """
    cfg = cfg or QuadConfig()
    stop_tol = cfg.polish_tol if stop_tol is None else stop_tol
    max_iters = cfg.bcd_max_iters if max_iters is None else max_iters
    if rule.d != basis2p.d:
        raise DimensionMismatch(f"Rule has dimension {rule.d}, basis {basis2p.d}")

    nodes = rule.nodes.copy()
    weights = rule.weights.copy()
    residual = float(np.linalg.norm(exactness_residual(basis2p, nodes, weights)))
    target = np.zeros(basis2p.size)
    target[0] = 1.0
    damping = 1e-3
    non_improving = 0

    for iteration in range(max_iters):
        if residual <= stop_tol:
            break
        previous = residual

        phi = phi_matrix(basis2p, nodes)
        candidate = np.linalg.lstsq(phi, target, rcond=cfg.inner_ls_tol)[0]
        candidate_residual = float(np.linalg.norm(phi @ candidate - target))
        if candidate_residual <= residual:
            weights, residual = candidate, candidate_residual

        if residual > stop_tol:
            nodes, residual, damping = _levenberg_marquardt_step(
                basis2p, nodes, weights, residual, damping, cfg.inner_ls_tol, phi @ weights - target
            )

        if previous - residual < cfg.stall_rtol * previous:
            non_improving += 1
        else:
            non_improving = 0
        if non_improving >= cfg.stall_patience:
            if residual > cfg.exactness_tol:
                raise Stalled(
                    f"Residual stuck at {residual:.3e} with M={rule.size} after {iteration + 1} iterations",
                    residual=residual,
                )
            break

    logger.debug(f"BCD refinement M={rule.size} residual={residual:.3e}")
    return QuadratureRule(
        nodes=nodes,
        weights=weights,
        residual=residual,
        basis2p_id=basis2p.fingerprint,
        exactness_degree=basis2p.p,
    )


def cluster_reduce(rule: QuadratureRule) -> QuadratureRule:
    """
    Merge the closest pair of nodes under the weight-scaled distance.

    d(a, b) = ||xi_a - xi_b|| * min(|w_a|, |w_b|); the merged node sits at the
    weighted centroid (w_a xi_a + w_b xi_b) / (w_a + w_b) and carries w_a + w_b.
    Ties go to the lowest (a, b). When the two weights nearly cancel the
    centroid is taken with |w| instead, which keeps it on the segment.

    Raises:
        TooFewNodes: If the rule has a single node
    """
    m = rule.size
    if m < 2:
        raise TooFewNodes("Cannot reduce a rule with a single node")

    nodes, weights = rule.nodes, rule.weights
    magnitude = np.abs(weights)
    distance = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=2)
    distance = distance * np.minimum(magnitude[:, None], magnitude[None, :])
    rows, cols = np.triu_indices(m, k=1)
    pick = int(np.argmin(distance[rows, cols]))
    a, b = int(rows[pick]), int(cols[pick])

    total = weights[a] + weights[b]
    mass = magnitude[a] + magnitude[b]
    if abs(total) > CANCELLATION_RTOL * mass:
        merged = (weights[a] * nodes[a] + weights[b] * nodes[b]) / total
    elif mass > 0.0:
        merged = (magnitude[a] * nodes[a] + magnitude[b] * nodes[b]) / mass
    else:
        merged = 0.5 * (nodes[a] + nodes[b])

    new_nodes = np.delete(nodes, b, axis=0)
    new_weights = np.delete(weights, b)
    new_nodes[a] = merged
    new_weights[a] = weights[a] + weights[b]
    return rule.with_values(new_nodes, new_weights, np.inf)


def _merge_coincident(rule: QuadratureRule, basis2p: OrthonormalBasis) -> QuadratureRule:
    """Merge nodes that coincide within COINCIDENT_TOL in max norm."""
    while rule.size > 1:
        gaps = np.abs(rule.nodes[:, None, :] - rule.nodes[None, :, :]).max(axis=2)
        rows, cols = np.triu_indices(rule.size, k=1)
        close = np.flatnonzero(gaps[rows, cols] <= COINCIDENT_TOL)
        if close.size == 0:
            break
        a, b = int(rows[close[0]]), int(cols[close[0]])
        nodes = np.delete(rule.nodes, b, axis=0)
        weights = np.delete(rule.weights, b)
        weights[a] = rule.weights[a] + rule.weights[b]
        residual = np.linalg.norm(exactness_residual(basis2p, nodes, weights))
        rule = rule.with_values(nodes, weights, residual)
    return rule


def _refine_ok(
    rule: QuadratureRule, basis2p: OrthonormalBasis, cfg: QuadConfig, max_iters: int
) -> Optional[QuadratureRule]:
    """Refine to exactness_tol within max_iters, or None on a stall or a miss."""
    try:
        refined = bcd_refine(rule, basis2p, cfg, stop_tol=cfg.exactness_tol, max_iters=max_iters)
    except Stalled as exc:
        logger.debug(f"Refinement stalled at M={rule.size}: residual {exc.residual:.3e}")
        return None
    if refined.residual > cfg.exactness_tol:
        return None
    return _merge_coincident(refined, basis2p)


def generate(gm: GaussianMixture, basis2p: OrthonormalBasis, cfg: Optional[QuadConfig] = None) -> QuadratureRule:
    """
    Build an exact rule for the order-2p basis with as few nodes as the reduction loop reaches.

    Candidates stop refining at exactness_tol; only the accepted rule is
    polished further, down to polish_tol.

    Args:
        gm: Parameter distribution
        basis2p: Orthonormal basis of degree 2p over gm
        cfg: Generation settings (m_init defaults to 3 * N_2p)

    Returns:
        The last rule that refined to within exactness_tol

    Raises:
        NoExactRuleFound: If neither m_init nor 2 * m_init nodes reach tolerance
    """
    cfg = cfg or QuadConfig()
    n2p = basis2p.size
    m = cfg.m_init if cfg.m_init is not None else 3 * n2p
    if m < n2p:
        logger.warning(f"m_init={m} is below N_2p={n2p}; the weight block is underdetermined")

    snapshot = _refine_ok(initial_rule(basis2p, gm, m, cfg.seed), basis2p, cfg, cfg.bcd_max_iters)
    if snapshot is None:
        logger.warning(f"No exact rule from {m} initial nodes; retrying with {2 * m}")
        snapshot = _refine_ok(initial_rule(basis2p, gm, 2 * m, cfg.seed), basis2p, cfg, cfg.bcd_max_iters)
        if snapshot is None:
            raise NoExactRuleFound(
                f"Could not reach exactness tolerance {cfg.exactness_tol:.1e} with {2 * m} nodes"
            )

    if cfg.reduction_enabled:
        budget = min(cfg.bcd_max_iters, cfg.reduction_max_iters)
        while snapshot.size > 1:
            candidate = _refine_ok(cluster_reduce(snapshot), basis2p, cfg, budget)
            if candidate is None:
                break
            snapshot = candidate

    polished = _merge_coincident(bcd_refine(snapshot, basis2p, cfg), basis2p)
    if polished.residual <= snapshot.residual:
        snapshot = polished

    if snapshot.negative_weights:
        logger.warning(f"Quadrature rule has {snapshot.negative_weights} negative weights")
    logger.info(f"Quadrature rule M={snapshot.size} residual={snapshot.residual:.2e} (N_2p={n2p})")
    return snapshot
