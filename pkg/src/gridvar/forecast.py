"""h-step forecasting and normalized prediction-error evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import NumericalError
from .model import VarModel


@dataclass(frozen=True)
class ForecastResult:
    """Point forecasts (n x H) and per-horizon prediction covariances (H x n x n)."""

    points: np.ndarray
    covariances: np.ndarray

    @property
    def h_max(self) -> int:
        return self.points.shape[1]


def prediction_covariances(model: VarModel, h_max: int) -> np.ndarray:
    """Sigma_1 = Psi; Sigma_h = Sigma_{h-1} + A^{h-1} Psi (A^{h-1})'."""
    if h_max < 1:
        raise ValueError("need at least one horizon")
    n = model.n
    psi = model.innovation.matrix
    a = model.transition.matrix
    out = np.empty((h_max, n, n))
    cov = psi.copy()
    out[0] = cov
    b = np.eye(n)
    for h in range(1, h_max):
        b = a @ b
        cov = cov + b @ psi @ b.T
        out[h] = 0.5 * (cov + cov.T)
    return out


def predict(model: VarModel, z_t: np.ndarray, h_max: int) -> ForecastResult:
    """Best linear h-step predictions from state z_t: iterated one-step maps."""
    z_t = np.asarray(z_t, dtype=float)
    if z_t.shape != (model.n,):
        raise ValueError(f"state must have shape ({model.n},)")
    points = np.empty((model.n, h_max))
    x = z_t
    for h in range(h_max):
        x = model.transition.matrix @ x
        points[:, h] = x
    return ForecastResult(points=points, covariances=prediction_covariances(model, h_max))


def stationary_snapshots(model: VarModel, n_draws: int, spacing: int = 50,
                         burn_in: int = 500, rng: np.random.Generator | None = None,
                         seed: int = 0) -> np.ndarray:
    """Approximate stationary draws: one burned-in path sampled every `spacing` steps.

    Returns an (n, n_draws) matrix of states.
    """
    rng = rng or np.random.default_rng(seed)
    n = model.n
    a = model.transition.matrix
    chol = model.innovation.cholesky()
    steps = burn_in + spacing * n_draws
    noise = chol @ rng.standard_normal((n, steps))
    out = np.empty((n, n_draws))
    x = np.zeros(n)
    col = 0
    for s in range(steps):
        x = a @ x + noise[:, s]
        if s >= burn_in and (s - burn_in + 1) % spacing == 0:
            out[:, col] = x
            col += 1
    return out


def _subset_cholesky(covariances: np.ndarray, subset: np.ndarray) -> list[np.ndarray]:
    factors = []
    for cov in covariances:
        sub = cov[np.ix_(subset, subset)]
        try:
            factors.append(np.linalg.cholesky(sub))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("prediction covariance is singular on the subset") from exc
    return factors


def pmse_draws(
    true_model: VarModel,
    estimated: dict[str, scipy.sparse.spmatrix],
    h_max: int,
    subsets: dict[str, np.ndarray],
    n_mc: int = 2000,
    spacing: int = 50,
    burn_in: int = 500,
    rng: np.random.Generator | None = None,
    seed: int = 0,
    covariances: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Per-draw normalized prediction errors for several estimated transitions.

    For each stationary draw z and horizon h the statistic is
    1 + (1/|S|) * d' Sigma_h[S,S]^{-1} d with d the gap between the true and
    estimated h-step predictors restricted to subset S. Sharing the draws
    across estimators pairs the comparisons. Returns, per estimator name, an
    array of shape (h_max, n_subsets, n_mc).
    """
    snapshots = stationary_snapshots(true_model, n_mc, spacing=spacing,
                                     burn_in=burn_in, rng=rng, seed=seed)
    if covariances is None:
        covariances = prediction_covariances(true_model, h_max)
    subset_items = list(subsets.items())
    factors = {name: _subset_cholesky(covariances, idx) for name, idx in subset_items}

    a_true = true_model.transition.matrix
    out = {name: np.empty((h_max, len(subset_items), n_mc)) for name in estimated}
    p_true = snapshots
    p_est = {name: snapshots for name in estimated}
    for h in range(h_max):
        p_true = a_true @ p_true
        for name, a_est in estimated.items():
            p_est[name] = a_est @ p_est[name]
            gap = p_true - p_est[name]
            for s_pos, (s_name, idx) in enumerate(subset_items):
                white = scipy.linalg.solve_triangular(
                    factors[s_name][h], gap[idx], lower=True, check_finite=False)
                out[name][h, s_pos] = 1.0 + np.sum(white * white, axis=0) / idx.size
    return out


@dataclass
class PmseEntry:
    h: int
    value: float
    se: float
    n_draws: int


def pmse(true_model: VarModel, est_model: VarModel, h_max: int,
         subset: np.ndarray | None = None, n_mc: int = 2000, spacing: int = 50,
         burn_in: int = 500, seed: int = 0,
         rng: np.random.Generator | None = None) -> list[PmseEntry]:
    """Normalized prediction mean squared error of an estimated model, per horizon.

    The expectation over the stationary state is estimated from spaced
    snapshots of one long simulated path of the true model; standard errors
    are over the draws.
    """
    if subset is None:
        subset = np.arange(true_model.n)
    draws = pmse_draws(true_model, {"est": est_model.transition.matrix}, h_max,
                       {"s": np.asarray(subset)}, n_mc=n_mc, spacing=spacing,
                       burn_in=burn_in, rng=rng, seed=seed)["est"]
    entries = []
    for h in range(h_max):
        q = draws[h, 0]
        entries.append(PmseEntry(h=h + 1, value=float(np.mean(q)),
                                 se=float(np.std(q, ddof=1) / np.sqrt(n_mc)),
                                 n_draws=n_mc))
    return entries
