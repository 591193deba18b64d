"""
Parameter-dependent linear systems and their lifted (Galerkin) counterparts.
"""
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from src.errors import DimensionMismatch
from src.models.basis import OrthonormalBasis
from src.models.mixture import MultiIndex
from src.models.quadrature import QuadratureRule


@runtime_checkable
class ParametricMatrix(Protocol):
    """Matrix-valued function of xi that can be evaluated at a batch of points."""

    @property
    def shape(self) -> Tuple[int, int]: ...

    @property
    def d(self) -> int: ...

    @property
    def degree(self) -> Optional[int]:
        """Total polynomial degree in xi, or None when the map is not a polynomial."""
        ...

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class PolyMatrix:
    """
    Matrix whose entries are polynomials in xi: sum_t coefficients[t] * xi^exponents[t].
    """

    exponents: np.ndarray     # (n_terms, d)
    coefficients: np.ndarray  # (n_terms, rows, cols)

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.coefficients.shape[1]), int(self.coefficients.shape[2])

    @property
    def d(self) -> int:
        return int(self.exponents.shape[1])

    @property
    def degree(self) -> int:
        if self.exponents.shape[0] == 0:
            return 0
        return int(self.exponents.sum(axis=1).max())

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    @classmethod
    def from_terms(
        cls,
        terms: Mapping[MultiIndex, np.ndarray],
        shape: Tuple[int, int],
        d: int,
    ) -> "PolyMatrix":
        """Build from a {multi-index: coefficient matrix} mapping, merging repeated indices."""
        merged: dict = {}
        for alpha, coeff in terms.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != d:
                raise DimensionMismatch(f"Exponent {alpha} does not have dimension {d}")
            coeff = np.asarray(coeff, dtype=float).reshape(shape)
            merged[alpha] = merged.get(alpha, np.zeros(shape)) + coeff
        # zero terms would inflate the reported degree
        merged = {alpha: coeff for alpha, coeff in merged.items() if np.any(coeff)}
        if not merged:
            merged[(0,) * d] = np.zeros(shape)
        keys = sorted(merged, key=lambda a: (sum(a), tuple(-x for x in a)))
        exponents = np.array(keys, dtype=int).reshape(len(keys), d)
        coefficients = np.stack([merged[k] for k in keys])
        return cls(exponents=exponents, coefficients=coefficients)

    @classmethod
    def constant(cls, matrix: np.ndarray, d: int) -> "PolyMatrix":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls.from_terms({(0,) * d: matrix}, matrix.shape, d)

    @classmethod
    def from_entries(
        cls,
        entries: Sequence[Sequence[Iterable[Tuple[MultiIndex, float]]]],
        d: int,
    ) -> "PolyMatrix":
        """Build from a row-major grid whose entries are lists of (exponents, coeff) terms."""
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        terms: dict = {}
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise DimensionMismatch(f"Row {i} has {len(row)} entries, expected {cols}")
            for j, entry in enumerate(row):
                for alpha, coeff in entry:
                    alpha = tuple(int(a) for a in alpha)
                    block = terms.setdefault(alpha, np.zeros((rows, cols)))
                    block[i, j] += float(coeff)
        return cls.from_terms(terms, (rows, cols), d)

    def scaled(self, factor: float) -> "PolyMatrix":
        return PolyMatrix(self.exponents.copy(), self.coefficients * factor)

    def plus_constant(self, matrix: np.ndarray) -> "PolyMatrix":
        terms = {tuple(e): c for e, c in zip(self.exponents.tolist(), self.coefficients)}
        zero = (0,) * self.d
        terms[zero] = terms.get(zero, np.zeros(self.shape)) + np.asarray(matrix, dtype=float)
        return PolyMatrix.from_terms(terms, self.shape, self.d)

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """Values at each row of `points`, shape (n, rows, cols)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.d:
            raise DimensionMismatch(f"Points have dimension {points.shape[1]}, expected {self.d}")
        monomials = np.prod(points[:, None, :] ** self.exponents[None, :, :], axis=2)
        return np.einsum("nt,trc->nrc", monomials, self.coefficients)

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        return self.evaluate_batch(np.asarray(xi, dtype=float).reshape(1, -1))[0]


@dataclass(frozen=True, eq=False)
class StochasticLTI:
    """
    x_{t+1} = A(xi) x_t + B(xi) u_t + D(xi) omega(xi).

    D and omega are optional; omega is a polynomial vector map (n_w x 1).
    """

    A: ParametricMatrix
    B: ParametricMatrix
    D: Optional[ParametricMatrix] = None
    omega: Optional[ParametricMatrix] = None

    def __post_init__(self):
        n_x, cols = self.A.shape
        if n_x != cols:
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n_x:
            raise DimensionMismatch(f"B has {self.B.shape[0]} rows, expected {n_x}")
        if (self.D is None) != (self.omega is None):
            raise DimensionMismatch("D and omega must be given together")
        if self.D is not None:
            if self.D.shape[0] != n_x:
                raise DimensionMismatch(f"D has {self.D.shape[0]} rows, expected {n_x}")
            if self.omega.shape != (self.D.shape[1], 1):
                raise DimensionMismatch(f"omega must be {self.D.shape[1]}x1, got {self.omega.shape}")
        for name in ("B", "D", "omega"):
            matrix = getattr(self, name)
            if matrix is not None and matrix.d != self.A.d:
                raise DimensionMismatch(f"{name} depends on {matrix.d} parameters, A on {self.A.d}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return 0 if self.D is None else self.D.shape[1]

    @property
    def d(self) -> int:
        return self.A.d

    @property
    def max_degree(self) -> Optional[int]:
        """Largest entry degree of A, B, D; None if any of them is not polynomial."""
        degrees = [m.degree for m in (self.A, self.B, self.D) if m is not None]
        if any(deg is None for deg in degrees):
            return None
        return max(degrees)


@dataclass(frozen=True, eq=False)
class CoeffVector:
    """Stacked expansion coefficients [c_1; ...; c_Np], each block of length base_dim."""

    coeffs: np.ndarray
    base_dim: int

    def __post_init__(self):
        if self.base_dim <= 0 or self.coeffs.ndim != 1 or self.coeffs.size % self.base_dim:
            raise DimensionMismatch(
                f"Coefficient vector of length {self.coeffs.size} is not a multiple of {self.base_dim}"
            )

    @property
    def n_basis(self) -> int:
        return self.coeffs.size // self.base_dim

    @property
    def blocks(self) -> np.ndarray:
        """Coefficients as an (N_p, base_dim) array; row k is c_{k+1}."""
        return self.coeffs.reshape(self.n_basis, self.base_dim)

    @classmethod
    def from_blocks(cls, blocks: np.ndarray) -> "CoeffVector":
        blocks = np.asarray(blocks, dtype=float)
        return cls(coeffs=blocks.reshape(-1).copy(), base_dim=blocks.shape[1])

    @classmethod
    def deterministic(cls, value: np.ndarray, n_basis: int) -> "CoeffVector":
        """Lift a xi-independent vector: block 1 holds the value, the rest are zero."""
        value = np.atleast_1d(np.asarray(value, dtype=float))
        blocks = np.zeros((n_basis, value.size))
        blocks[0] = value
        return cls.from_blocks(blocks)


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    """
    Lifted deterministic system x_hat_{t+1} = A_hat x_hat_t + B_hat u_hat_t + D_hat w_hat_t.

    Row-block j, column-block k of each hat matrix holds <M(xi) Psi_k, Psi_j>.
    rule is None when the blocks were computed from exact moments.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    D_hat: Optional[np.ndarray]
    V: np.ndarray
    basis: OrthonormalBasis
    rule: Optional[QuadratureRule]
    n_x: int
    n_u: int
    n_w: int

    @property
    def n_basis(self) -> int:
        return self.basis.size
