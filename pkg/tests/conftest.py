"""
Pytest configuration and shared fixtures.
Provides mixtures, bases, quadrature rules and scenarios used across tests.
"""
import numpy as np
import pytest

from src.models.basis import OrthonormalBasis
from src.models.mixture import GaussianMixture
from src.models.quadrature import QuadConfig, QuadratureRule
from src.models.scenario import Scenario
from src.services.basis_service import gram_schmidt
from src.services.quadrature_service import generate
from src.services.scenario_service import scenario_obstacle
from src.services.uncertainty_service import mixture_new, moment_oracle

# Correlated, bimodal two-parameter mixture shipped with the obstacle scenario
OBSTACLE_COMPONENTS = [
    (0.5, [-0.5, -0.5], [[0.5, 0.2], [0.2, 0.5]]),
    (0.5, [0.75, 0.75], [[0.4, -0.15], [-0.15, 0.4]]),
]


@pytest.fixture(scope="session")
def standard_normal() -> GaussianMixture:
    """One-dimensional standard normal written as a one-component mixture."""
    return mixture_new([(1.0, [0.0], [[1.0]])])


@pytest.fixture(scope="session")
def mixture() -> GaussianMixture:
    return mixture_new(OBSTACLE_COMPONENTS)


@pytest.fixture(scope="session")
def basis(mixture: GaussianMixture) -> OrthonormalBasis:
    """Order-2 basis of the obstacle mixture (N_p = 6)."""
    return gram_schmidt(moment_oracle(mixture, 2), 2, 2)


@pytest.fixture(scope="session")
def basis4(mixture: GaussianMixture) -> OrthonormalBasis:
    """Order-4 basis the order-2 quadrature rule is built against (N_2p = 15)."""
    return gram_schmidt(moment_oracle(mixture, 2), 2, 4)


@pytest.fixture(scope="session")
def rule(mixture: GaussianMixture, basis4: OrthonormalBasis) -> QuadratureRule:
    return generate(mixture, basis4, QuadConfig(seed=0))


@pytest.fixture(scope="session")
def obstacle() -> Scenario:
    return scenario_obstacle()


@pytest.fixture(scope="session")
def obstacle_deterministic() -> Scenario:
    return scenario_obstacle(deterministic=True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
