"""Conditional Gaussian log-likelihood as a quadratic form in the coefficients.

The Gram matrix and cross-moment vector are assembled directly from the
indicator map's index structure; the n^2 x n^2 Kronecker product is never
materialized. A Cholesky reduction turns the quadratic form into a synthetic
regression ``min ||y - X alpha||^2`` whose additive constant is retained so
reported values are true log-likelihoods.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError
from .grid import GridPartition, IndicatorMap
from .model import InnovationCovariance, TransitionMatrix

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Observations of shape (n, T): one row per location in partition order."""

    values: np.ndarray
    partition: GridPartition

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise DataError("panel must be a 2-d array of shape (n, T)")
        if values.shape[0] != self.partition.n:
            raise DataError(
                f"panel has {values.shape[0]} rows but the grid has {self.partition.n} cells"
            )
        if values.shape[1] < 2:
            raise DataError("panel needs at least T=2 time points")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"panel contains a non-finite value at location {bad[0]}, time {bad[1]}"
            )
        values.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class QuadraticForm:
    """l(alpha) = -0.5 * ||y - X alpha||^2 + constant, with X upper-triangular."""

    x: np.ndarray
    y: np.ndarray
    constant: float = 0.0

    @property
    def m(self) -> int:
        return self.x.shape[1]

    def rss(self, alpha: np.ndarray) -> float:
        r = self.y - self.x @ alpha
        return float(r @ r)

    def loglik(self, alpha: np.ndarray) -> float:
        return -0.5 * self.rss(alpha) + self.constant


def build_gram(
    panel: TimeSeriesPanel, imap: IndicatorMap, psi_inv: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix and cross-moment vector of the coefficient quadratic form.

    Uses the selection structure of the indicator map: entry (c, c') of the
    Gram matrix is S[col_c, col_c'] * psi_inv[row_c, row_c'] where S is the
    lagged second-moment matrix, so only m x m values are ever formed.
    """
    z = panel.values
    z_past, z_cur = z[:, :-1], z[:, 1:]
    s = z_past @ z_past.T
    cross = z_cur @ z_past.T

    rows, cols = imap.a_rows, imap.a_cols
    gram = s[np.ix_(cols, cols)] * psi_inv[np.ix_(rows, rows)]
    cvec = (psi_inv @ cross)[rows, cols]
    return gram, cvec


def _cholesky_with_jitter(gram: np.ndarray) -> np.ndarray:
    """Upper-triangular factor of gram, adding escalating ridge jitter if needed."""
    m = gram.shape[0]
    base = 1e-10 * np.trace(gram) / m
    if base <= 0:
        base = 1e-10
    jitter = 0.0
    for _ in range(4):
        try:
            lower = np.linalg.cholesky(gram + jitter * np.eye(m))
            return lower.T
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0.0 else jitter * 100.0
    cond = float(np.linalg.cond(gram))
    raise NumericalError(
        f"Gram matrix is not positive definite even after jitter (cond ~ {cond:.3e})"
    )


def reduce_to_regression(
    gram: np.ndarray, cvec: np.ndarray, constant: float = 0.0
) -> QuadraticForm:
    """Cholesky-reduce (G, c) to the regression pair (X, y) with X'X = G, X'y = c."""
    x = _cholesky_with_jitter(gram)
    y = scipy.linalg.solve_triangular(x, cvec, trans="T", lower=False, check_finite=False)
    return QuadraticForm(x=x, y=y, constant=constant)


def build_quadratic_form(
    panel: TimeSeriesPanel, imap: IndicatorMap, psi: InnovationCovariance
) -> QuadraticForm:
    """Assemble the full quadratic form for a given innovation covariance."""
    psi_inv = psi.inverse()
    gram, cvec = build_gram(panel, imap, psi_inv)
    z_cur = panel.values[:, 1:]
    t = panel.t
    quad_cur = float(np.sum(z_cur * (psi_inv @ z_cur)))
    base = -0.5 * (t - 1) * (panel.n * LOG_2PI + psi.logdet())
    form = reduce_to_regression(gram, cvec)
    constant = 0.5 * float(form.y @ form.y) - 0.5 * quad_cur + base
    return QuadraticForm(x=form.x, y=form.y, constant=constant)


def loglik_direct(
    panel: TimeSeriesPanel, a: TransitionMatrix, psi: InnovationCovariance
) -> float:
    """Conditional log-likelihood from the residual sums, without the Gram reduction."""
    z = panel.values
    resid = z[:, 1:] - a.matrix @ z[:, :-1]
    chol = psi.cholesky()
    white = scipy.linalg.solve_triangular(chol, resid, lower=True, check_finite=False)
    quad = float(np.sum(white * white))
    t = panel.t
    return -0.5 * quad - 0.5 * (t - 1) * (panel.n * LOG_2PI + psi.logdet())


def update_psi(panel: TimeSeriesPanel, a: TransitionMatrix) -> InnovationCovariance:
    """Innovation covariance from the empirical residual second moments.

    Averages the residual outer products with divisor T-1. When T-1 < n the
    result is rank deficient; a warning is emitted and downstream stages that
    need the inverse will fail.
    """
    z = panel.values
    resid = z[:, 1:] - a.matrix @ z[:, :-1]
    t = panel.t
    if t - 1 < panel.n:
        warnings.warn(
            f"T-1 = {t - 1} residual vectors for n = {panel.n} locations: "
            "the covariance estimate is rank deficient",
            stacklevel=2,
        )
    psi = (resid @ resid.T) / (t - 1)
    return InnovationCovariance(matrix=0.5 * (psi + psi.T))
