"""
Monomial ordering and orthonormal polynomial basis models.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.models.mixture import MultiIndex


@dataclass(frozen=True)
class MonomialOrder:
    """
    All multi-indices of total degree <= p in graded-lexicographic order.
    """

    indices: Tuple[MultiIndex, ...]
    d: int
    p: int
    _positions: Dict[MultiIndex, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_positions", {alpha: k for k, alpha in enumerate(self.indices)}
        )

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def exponents(self) -> np.ndarray:
        """Exponent matrix of shape (N, d)."""
        return np.array(self.indices, dtype=int).reshape(len(self.indices), self.d)

    @property
    def degrees(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def position(self, alpha: MultiIndex) -> int:
        """Index of a multi-index in the order (KeyError if absent)."""
        return self._positions[tuple(alpha)]


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    """
    Polynomials Psi_k = sum_j coeffs[k, j] * p_j over the monomial order.

    coeffs is lower triangular and row 0 is the constant polynomial 1.
    """

    coeffs: np.ndarray        # (N, N)
    order: MonomialOrder
    gram_residual: float

    @property
    def size(self) -> int:
        return self.order.size

    @property
    def d(self) -> int:
        return self.order.d

    @property
    def p(self) -> int:
        return self.order.p

    @property
    def degrees(self) -> np.ndarray:
        """Total degree of each basis polynomial."""
        return self.order.degrees

    @property
    def fingerprint(self) -> str:
        """Short content hash used to tie quadrature rules to the basis they were fit on."""
        digest = hashlib.sha1(np.ascontiguousarray(self.coeffs).tobytes()).hexdigest()
        return f"d{self.d}-p{self.p}-{digest[:12]}"
