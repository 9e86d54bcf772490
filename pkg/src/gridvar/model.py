"""Coefficient vectors, transition-matrix assembly, stability checks, innovation models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.spatial.distance import cdist

from .errors import NumericalError
from .grid import GridPartition, IndicatorMap

BLOCK_BOUNDARY = "B"


@dataclass(frozen=True)
class CoefficientVector:
    """All free coefficients, laid out as (block 1, ..., block K, boundary)."""

    values: np.ndarray
    partition: GridPartition

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.partition.m,):
            raise ValueError(
                f"coefficient vector has length {values.shape}, expected ({self.partition.m},)"
            )
        values.setflags(write=False)

    def block(self, k: int) -> np.ndarray:
        """Coefficients of stencil block k (0-based), one per inner cell."""
        n_i = self.partition.n_inner
        if not 0 <= k < self.partition.k:
            raise IndexError(f"block index {k} out of range 0..{self.partition.k - 1}")
        return self.values[k * n_i:(k + 1) * n_i]

    def boundary(self) -> np.ndarray:
        return self.values[self.partition.k * self.partition.n_inner:]


@dataclass(frozen=True)
class TransitionMatrix:
    """Sparse n x n autoregressive matrix with its generating coefficients."""

    matrix: scipy.sparse.csr_matrix
    alpha: CoefficientVector | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True)
class InnovationCovariance:
    """Spatial covariance of the Gaussian innovations, with optional provenance."""

    matrix: np.ndarray
    family: str | None = None
    variance: float | None = None
    corr_range: float | None = None

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("innovation covariance must be a square matrix")
        mat.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor; raises NumericalError if not positive definite."""
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("innovation covariance is not positive definite") from exc

    def inverse(self) -> np.ndarray:
        """Inverse computed through the Cholesky factor."""
        chol = self.cholesky()
        inv = scipy.linalg.cho_solve((chol, True), np.eye(self.n), check_finite=False)
        return 0.5 * (inv + inv.T)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky()))))


@dataclass(frozen=True)
class VarModel:
    """Assembled lag-1 model: transition matrix plus innovation covariance."""

    transition: TransitionMatrix
    innovation: InnovationCovariance

    @property
    def n(self) -> int:
        return self.transition.n


def assemble_transition(alpha: CoefficientVector, imap: IndicatorMap) -> TransitionMatrix:
    """Place the coefficient vector into the sparse transition matrix."""
    if alpha.partition is not imap.partition and alpha.partition != imap.partition:
        raise ValueError("coefficient vector and indicator map use different partitions")
    n = imap.n
    mat = scipy.sparse.csr_matrix(
        (alpha.values.copy(), (imap.a_rows, imap.a_cols)), shape=(n, n)
    )
    return TransitionMatrix(matrix=mat, alpha=alpha)


def _as_spmatrix(a) -> scipy.sparse.spmatrix:
    if isinstance(a, TransitionMatrix):
        return a.matrix
    if scipy.sparse.issparse(a):
        return a
    return scipy.sparse.csr_matrix(np.asarray(a, dtype=float))


def check_stability_rowsum(a) -> bool:
    """True when every row's absolute sum is < 1 (sufficient for stability)."""
    mat = _as_spmatrix(a)
    rowsums = np.abs(mat).sum(axis=1)
    return bool(np.max(rowsums) < 1.0)


def check_stability_spectral(a, tol: float = 0.0) -> tuple[bool, float]:
    """Spectral-radius stability test; returns (radius < 1 - tol, radius)."""
    mat = _as_spmatrix(a).toarray()
    try:
        eigvals = np.linalg.eigvals(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigenvalue computation failed to converge") from exc
    radius = float(np.max(np.abs(eigvals))) if eigvals.size else 0.0
    return radius < 1.0 - tol, radius


def exponential_covariance(
    partition: GridPartition,
    variance: float = 1.0,
    corr_range: float = 0.25,
    coords: np.ndarray | None = None,
) -> InnovationCovariance:
    """Exponential covariance between cell centers, in partition index order.

    Coordinates default to the grid scaled to the unit square; pass explicit
    ``coords`` (n x 2) for physical locations.
    """
    if variance <= 0 or corr_range <= 0:
        raise ValueError("variance and range must be positive")
    if coords is None:
        coords = partition.coordinates(unit_square=True)
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (partition.n, 2):
        raise ValueError(f"coords must have shape ({partition.n}, 2)")
    dist = cdist(coords, coords)
    mat = variance * np.exp(-dist / corr_range)
    return InnovationCovariance(
        matrix=0.5 * (mat + mat.T), family="exponential",
        variance=variance, corr_range=corr_range,
    )
