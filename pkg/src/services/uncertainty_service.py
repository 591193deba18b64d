"""
Uncertainty service layer for the Gaussian-mixture parameter distribution.
Handles validation, sampling, density evaluation and exact raw moments.
"""
import logging
from typing import Dict, Iterable, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.stats import multivariate_normal

from src.errors import CholeskyFailure, DegreeOverflow, DimensionMismatch, NonPSDCovariance, WeightSumInvalid
from src.models.mixture import GaussianMixture, MultiIndex, SampleBatch

logger = logging.getLogger(__name__)

GENERATOR_ID = "numpy.PCG64"

# (weight, mean, covariance)
Component = Tuple[float, Sequence[float], Sequence[Sequence[float]]]


class MomentOracle(Protocol):
    """Anything that returns E[xi^alpha] under a fixed probability measure."""

    @property
    def dimension(self) -> int: ...

    def moment(self, alpha: MultiIndex) -> float: ...


def mixture_new(components: Iterable[Component]) -> GaussianMixture:
    """
    Validate components and build a GaussianMixture.

    Args:
        components: (weight, mean, covariance) triples

    Returns:
        Validated mixture with weights summing to one

    Raises:
        DimensionMismatch: If means/covariances disagree on the dimension
        WeightSumInvalid: If a weight is negative or the sum is off by more than 1e-9
        NonPSDCovariance: If a covariance is asymmetric or indefinite

    Note:
        Weights within 1e-9 of summing to one are renormalized exactly.
    """
    components = list(components)
    if not components:
        raise DimensionMismatch("A mixture needs at least one component", field="components")

    weights = np.array([float(c[0]) for c in components])
    means = [np.atleast_1d(np.asarray(c[1], dtype=float)) for c in components]
    covs = [np.atleast_2d(np.asarray(c[2], dtype=float)) for c in components]

    d = means[0].size
    for j, (mean, cov) in enumerate(zip(means, covs)):
        if mean.ndim != 1 or mean.size != d:
            raise DimensionMismatch(f"Component {j} mean has dimension {mean.size}, expected {d}", field="mean")
        if cov.shape != (d, d):
            raise DimensionMismatch(f"Component {j} covariance has shape {cov.shape}, expected ({d}, {d})", field="cov")

    if np.any(weights < 0.0):
        raise WeightSumInvalid(f"Negative mixture weight in {weights.tolist()}", field="weight")
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        raise WeightSumInvalid(f"Mixture weights sum to {total!r}, expected 1", field="weight")
    weights = weights / total

    for j, cov in enumerate(covs):
        norm = np.abs(cov).max()
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, norm)):
            raise NonPSDCovariance(f"Component {j} covariance is not symmetric", field="cov")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -1e-10 * max(np.abs(eigvals).max(), 1e-300):
            raise NonPSDCovariance(
                f"Component {j} covariance has eigenvalue {eigvals.min():.3g}", field="cov"
            )

    return GaussianMixture(
        weights=weights,
        means=np.stack(means),
        covariances=np.stack([0.5 * (c + c.T) for c in covs]),
    )


def mixture_mean(gm: GaussianMixture) -> np.ndarray:
    """First moment of the mixture."""
    return gm.weights @ gm.means


def mixture_covariance(gm: GaussianMixture) -> np.ndarray:
    """Covariance of the mixture: within-component plus between-component spread."""
    mean = mixture_mean(gm)
    centered = gm.means - mean
    within = np.einsum("k,kij->ij", gm.weights, gm.covariances)
    between = np.einsum("k,ki,kj->ij", gm.weights, centered, centered)
    return within + between


def _square_root(cov: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = cov; eigen square root when Cholesky fails."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals.min() < -1e-8:
            raise CholeskyFailure(f"Covariance has negative eigenvalue {eigvals.min():.3g}")
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample(gm: GaussianMixture, n: int, seed: int) -> SampleBatch:
    """
    Draw n i.i.d. samples: component selection, then a Gaussian draw.

    Args:
        gm: Mixture to sample
        n: Number of draws (>= 1)
        seed: Seed of the PCG64 stream; identical (seed, n, gm) give identical batches

    Returns:
        SampleBatch with points and the component label of each draw

    Raises:
        ValueError: If n < 1
        CholeskyFailure: If a covariance has a clearly negative eigenvalue
    """
    if n < 1:
        raise ValueError(f"Sample size must be at least 1, got {n}")

    rng = np.random.Generator(np.random.PCG64(seed))
    labels = rng.choice(gm.n_components, size=n, p=gm.weights)
    standard = rng.standard_normal((n, gm.dimension))

    factors = np.stack([_square_root(cov) for cov in gm.covariances])
    points = gm.means[labels] + np.einsum("nij,nj->ni", factors[labels], standard)
    return SampleBatch(points=points, seed=seed, generator_id=GENERATOR_ID, components=labels)


class GaussianMomentOracle:
    """
    Exact raw moments of a Gaussian mixture up to a degree cap.

    Each component moment follows the recursion on the first nonzero
    coordinate i: m(a) = mu_i m(a - e_i) + sum_k S_ik (a - e_i)_k m(a - e_i - e_k).
    """

    def __init__(self, gm: GaussianMixture, max_degree: int):
        self.gm = gm
        self.max_degree = max_degree
        self._tables: Tuple[Dict[MultiIndex, float], ...] = tuple(
            {(0,) * gm.dimension: 1.0} for _ in range(gm.n_components)
        )

    @property
    def dimension(self) -> int:
        return self.gm.dimension

    def _component_moment(self, j: int, alpha: MultiIndex) -> float:
        table = self._tables[j]
        if alpha in table:
            return table[alpha]
        # Fill missing entries bottom-up to keep the recursion shallow
        pending = [alpha]
        while pending:
            current = pending[-1]
            if current in table:
                pending.pop()
                continue
            i = next(idx for idx, a in enumerate(current) if a > 0)
            reduced = list(current)
            reduced[i] -= 1
            reduced = tuple(reduced)
            needed = [reduced]
            for k, count in enumerate(reduced):
                if count > 0:
                    lower = list(reduced)
                    lower[k] -= 1
                    needed.append(tuple(lower))
            missing = [m for m in needed if m not in table]
            if missing:
                pending.extend(missing)
                continue
            mu = self.gm.means[j]
            cov = self.gm.covariances[j]
            value = mu[i] * table[reduced]
            for k, count in enumerate(reduced):
                if count > 0:
                    lower = list(reduced)
                    lower[k] -= 1
                    value += cov[i, k] * count * table[tuple(lower)]
            table[current] = value
            pending.pop()
        return table[alpha]

    def moment(self, alpha: MultiIndex) -> float:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dimension:
            raise DimensionMismatch(f"Multi-index {alpha} does not have dimension {self.dimension}")
        if any(a < 0 for a in alpha):
            raise ValueError(f"Multi-index {alpha} has negative exponents")
        if sum(alpha) > self.max_degree:
            raise DegreeOverflow(f"Moment degree {sum(alpha)} exceeds cap {self.max_degree}")
        return float(sum(
            w * self._component_moment(j, alpha) for j, w in enumerate(self.gm.weights)
        ))


def moment_oracle(gm: GaussianMixture, p: int) -> GaussianMomentOracle:
    """Oracle sized for an order-p pipeline: the order-2p basis needs moments up to 4p."""
    return GaussianMomentOracle(gm, max_degree=4 * p + 2)


def raw_moment(gm: GaussianMixture, alpha: MultiIndex, max_degree: Optional[int] = None) -> float:
    """
    Exact E[xi^alpha] under the mixture.

    Args:
        gm: Mixture
        alpha: Exponent vector of length d
        max_degree: Degree cap (defaults to |alpha|, i.e. no cap)

    Raises:
        DegreeOverflow: If |alpha| exceeds max_degree
    """
    cap = sum(alpha) if max_degree is None else max_degree
    return GaussianMomentOracle(gm, cap).moment(alpha)


def pdf_eval(gm: GaussianMixture, x: np.ndarray) -> float:
    """
    Mixture density at x.

    Raises:
        DimensionMismatch: If x does not have dimension d
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (gm.dimension,):
        raise DimensionMismatch(f"Point has shape {x.shape}, expected ({gm.dimension},)")
    return float(pdf_eval_batch(gm, x[None, :])[0])


def pdf_eval_batch(gm: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Mixture density at each row of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != gm.dimension:
        raise DimensionMismatch(f"Points have dimension {points.shape[1]}, expected {gm.dimension}")
    density = np.zeros(points.shape[0])
    for w, mean, cov in zip(gm.weights, gm.means, gm.covariances):
        density += w * np.atleast_1d(
            multivariate_normal(mean=mean, cov=cov, allow_singular=True).pdf(points)
        )
    return density
