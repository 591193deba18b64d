"""
Gaussian-mixture model of the uncertain parameter vector and its sample batches.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Exponent vector of a monomial xi_1^a_1 ... xi_d^a_d
MultiIndex = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """
    Joint density of the uncertain parameters as a weighted sum of Gaussians.

    Instances are created through `uncertainty_service.mixture_new`, which
    validates weights, dimensions and positive semi-definiteness.
    """

    weights: np.ndarray       # (K,)
    means: np.ndarray         # (K, d)
    covariances: np.ndarray   # (K, d, d)

    @property
    def dimension(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """n i.i.d. draws from a mixture; bit-identical for identical (seed, n, mixture)."""

    points: np.ndarray        # (n, d)
    seed: int
    generator_id: str
    components: np.ndarray    # (n,) index of the component each draw came from

    @property
    def size(self) -> int:
        return int(self.points.shape[0])
