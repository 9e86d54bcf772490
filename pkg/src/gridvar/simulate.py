"""Model simulation and the replicated estimation benchmark.

Per-replicate randomness comes from child seed sequences spawned off the
design's master seed with fixed stream tags, so results are reproducible no
matter how replicates are scheduled across workers.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import forecast as _forecast
from .errors import ConfigError, NumericalError, UnstableModelError
from .genlasso import SolverOptions
from .grid import GridLayout, GridSpec, Stencil
from .likelihood import TimeSeriesPanel
from .model import (
    CoefficientVector,
    InnovationCovariance,
    VarModel,
    assemble_transition,
    check_stability_spectral,
    exponential_covariance,
)
from .pipeline import (
    STAGE_ADAPTIVE,
    STAGE_FUSED,
    STAGE_GLS,
    STAGE_OLS,
    block_clusters,
    fit,
    fit_ols,
    fit_gls,
)

ESTIMATORS = (STAGE_OLS, STAGE_GLS, STAGE_FUSED, STAGE_ADAPTIVE)
QUANTILE_LEVELS = (2.5, 25.0, 50.0, 75.0, 97.5)
PSI_QUANTILE_LEVELS = (25.0, 50.0, 75.0)

# spawn-key stream tags
_PANEL_STREAM = 0
_PMSE_STREAM = 1

# a fused block whose true values are identically zero counts as recovered
# only when the estimate is this close to zero
ZERO_BLOCK_TOL = 0.05


@dataclass(frozen=True)
class SimulationDesign:
    layout: GridLayout
    truth: CoefficientVector
    innovation: InnovationCovariance
    t: int
    burn_in: int = 500
    replicates: int = 1
    seed: int = 0
    allow_unstable: bool = False

    def __post_init__(self):
        if self.t < 2:
            raise ConfigError("design needs T >= 2")
        if self.burn_in < 0 or self.replicates < 1:
            raise ConfigError("burn_in must be >= 0 and replicates >= 1")

    def model(self) -> VarModel:
        a_mat = assemble_transition(self.truth, self.layout.imap)
        return VarModel(transition=a_mat, innovation=self.innovation)


def _replicate_rng(seed: int, stream: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, replicate)))


def simulate_panel(design: SimulationDesign, replicate: int = 0) -> TimeSeriesPanel:
    """Draw one panel: burn in from zero, then record T consecutive states."""
    model = design.model()
    stable, radius = check_stability_spectral(model.transition)
    if not stable and not design.allow_unstable:
        raise UnstableModelError(
            f"true transition matrix has spectral radius {radius:.4f} >= 1; "
            "refusing to simulate (set allow_unstable to override)"
        )
    rng = _replicate_rng(design.seed, _PANEL_STREAM, replicate)
    n = model.n
    a_mat = model.transition.matrix
    chol = design.innovation.cholesky()
    steps = design.burn_in + design.t - 1
    noise = chol @ rng.standard_normal((n, steps))

    x = np.zeros(n)
    for s in range(design.burn_in):
        x = a_mat @ x + noise[:, s]
    z = np.empty((n, design.t))
    z[:, 0] = x
    for j in range(1, design.t):
        z[:, j] = a_mat @ z[:, j - 1] + noise[:, design.burn_in + j - 1]
    return TimeSeriesPanel(values=z, partition=design.layout.partition)


DEFAULT_TRUTH_VALUES: dict[str, object] = {
    "self": 0.25,
    "left": (0.15, 0.075, -0.075, -0.15),
    "right": 0.0,
    "up": (0.2, -0.1),
    "down": (-0.1, 0.2),
    "boundary": 0.3,
}


def benchmark_truth(layout: GridLayout, values: dict | None = None) -> CoefficientVector:
    """Clustered truth on the 7x7 benchmark grid.

    Block 1 (self) is constant; block 2 (left) has four quadrant clusters;
    block 3 (right) is zero; blocks 4/5 (up/down) split into two half planes;
    any further blocks (K=9) are zero; boundary coefficients share one value.
    Inner rows satisfy sum_k |a_k| <= 0.8 with the default values.
    """
    values = {**DEFAULT_TRUTH_VALUES, **(values or {})}
    part = layout.partition
    n_i, k = part.n_inner, part.k
    inner = np.asarray(part.cells[:n_i], dtype=int)
    jx, jy = inner[:, 0] - 1, inner[:, 1] - 1

    left = np.asarray(values["left"], dtype=float)
    up = np.asarray(values["up"], dtype=float)
    down = np.asarray(values["down"], dtype=float)
    if left.shape != (4,) or up.shape != (2,) or down.shape != (2,):
        raise ConfigError("truth values need 4 left-cluster and 2 up/down-cluster entries")

    blocks = [np.full(n_i, float(values["self"]))]
    quadrant = (jx >= 2).astype(int) + 2 * (jy >= 2).astype(int)
    blocks.append(left[quadrant])
    blocks.append(np.full(n_i, float(values["right"])))
    half = (jy >= 2).astype(int)
    blocks.append(up[half])
    blocks.append(down[half])
    for _ in range(5, k):
        blocks.append(np.zeros(n_i))
    boundary = np.full(part.n_boundary, float(values["boundary"]))
    return CoefficientVector(values=np.concatenate(blocks + [boundary]), partition=part)


def benchmark_design_7x7(
    t: int = 500,
    k: int = 5,
    replicates: int = 100,
    seed: int = 0,
    values: dict | None = None,
    variance: float = 1.0,
    corr_range: float = 0.25,
    burn_in: int = 500,
) -> SimulationDesign:
    """The 7x7 simulation benchmark: K in {5, 9}, exponential innovations."""
    if k not in (5, 9):
        raise ConfigError(f"benchmark design supports K=5 or K=9, got {k}")
    layout = GridLayout.build(GridSpec(nx=7, ny=7),
                              Stencil.preset("rook5" if k == 5 else "queen9"))
    truth = benchmark_truth(layout, values)
    innovation = exponential_covariance(layout.partition, variance=variance,
                                        corr_range=corr_range)
    return SimulationDesign(layout=layout, truth=truth, innovation=innovation,
                            t=t, burn_in=burn_in, replicates=replicates, seed=seed)


@dataclass(frozen=True)
class PmseSettings:
    horizons: int = 3
    n_mc: int = 400
    spacing: int = 50
    burn_in: int = 500


@dataclass
class PmseTable:
    """Per-replicate mean normalized prediction errors, (R, est, h, subset)."""

    estimators: list[str]
    h_max: int
    subsets: list[str]
    replicate_values: np.ndarray

    def _axes(self, estimator: str, h: int, subset: str) -> tuple[int, int, int]:
        return self.estimators.index(estimator), h - 1, self.subsets.index(subset)

    def value(self, estimator: str, h: int, subset: str) -> float:
        e, hh, s = self._axes(estimator, h, subset)
        return float(np.mean(self.replicate_values[:, e, hh, s]))

    def se(self, estimator: str, h: int, subset: str) -> float:
        e, hh, s = self._axes(estimator, h, subset)
        vals = self.replicate_values[:, e, hh, s]
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0

    def gap(self, better: str, worse: str, h: int, subset: str) -> tuple[float, float]:
        """Paired PMSE difference worse - better and its standard error."""
        eb, hh, s = self._axes(better, h, subset)
        ew = self.estimators.index(worse)
        diff = (self.replicate_values[:, ew, hh, s]
                - self.replicate_values[:, eb, hh, s])
        se = float(np.std(diff, ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else 0.0
        return float(np.mean(diff)), se


@dataclass
class EnsembleSummary:
    estimators: list[str]
    quantile_levels: tuple[float, ...]
    coefficient_quantiles: np.ndarray        # (est, level, m)
    alphas: np.ndarray                       # (R, est, m)
    recovery_rates: np.ndarray               # (est, K)
    truth_cluster_counts: list[int]
    psi_quantiles: np.ndarray | None         # (3, n, n), adaptive stage
    pmse: PmseTable | None
    n_replicates: int
    n_excluded: int
    failures: list[tuple[int, str]] = field(default_factory=list)

    def estimator_index(self, name: str) -> int:
        return self.estimators.index(name)


def _zero_blocks(truth: CoefficientVector) -> list[bool]:
    return [bool(np.all(truth.block(k) == 0.0)) for k in range(truth.partition.k)]


def _cluster_counts(alpha: np.ndarray, layout: GridLayout) -> list[int]:
    return [len(c) for c in block_clusters(alpha, layout)]


def _replicate_job(design: SimulationDesign, rep: int, estimators: tuple[str, ...],
                   n_lambdas: int, gamma: float, opts: SolverOptions,
                   pmse_cfg: PmseSettings | None, sigma_covs: np.ndarray | None,
                   subsets: dict[str, np.ndarray] | None) -> dict:
    panel = simulate_panel(design, rep)
    layout = design.layout
    alphas: dict[str, np.ndarray] = {}
    psi_adaptive = None

    penalized = set(estimators) & {STAGE_FUSED, STAGE_ADAPTIVE}
    if penalized:
        report = fit(panel, layout, include_gls=STAGE_GLS in estimators,
                     n_lambdas=n_lambdas, gamma=gamma, opts=opts)
        for name in estimators:
            alphas[name] = report.stage(name).alpha
        psi_adaptive = report.stage(STAGE_ADAPTIVE).psi if STAGE_ADAPTIVE in estimators else None
    else:
        alpha0, psi1 = fit_ols(panel, layout, opts)
        if STAGE_OLS in estimators:
            alphas[STAGE_OLS] = alpha0
        if STAGE_GLS in estimators:
            alphas[STAGE_GLS] = fit_gls(panel, layout, psi1, opts)

    counts = {name: _cluster_counts(a, layout) for name, a in alphas.items()}

    pmse_vals = None
    if pmse_cfg is not None:
        true_model = design.model()
        est_mats = {
            name: assemble_transition(
                CoefficientVector(a, layout.partition), layout.imap).matrix
            for name, a in alphas.items()
        }
        rng = _replicate_rng(design.seed, _PMSE_STREAM, rep)
        draws = _forecast.pmse_draws(true_model, est_mats, pmse_cfg.horizons, subsets,
                                     n_mc=pmse_cfg.n_mc, spacing=pmse_cfg.spacing,
                                     burn_in=pmse_cfg.burn_in, rng=rng,
                                     covariances=sigma_covs)
        pmse_vals = {name: arr.mean(axis=2) for name, arr in draws.items()}

    return {"rep": rep, "alphas": alphas, "counts": counts,
            "psi": psi_adaptive, "pmse": pmse_vals}


def run_replicates(
    design: SimulationDesign,
    estimators: tuple[str, ...] = ESTIMATORS,
    threads: int = 1,
    n_lambdas: int = 50,
    gamma: float = 1.0,
    opts: SolverOptions | None = None,
    pmse_settings: PmseSettings | None = None,
) -> EnsembleSummary:
    """Fit every requested estimator on each simulated replicate and aggregate.

    Returns coefficient quantiles, per-block cluster-recovery rates, the
    innovation-covariance quantiles of the adaptive stage, and (when
    ``pmse_settings`` is given) the paired forecast-error table. Failed
    replicates are excluded with a warning and counted.
    """
    for name in estimators:
        if name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    opts = opts or SolverOptions()
    layout = design.layout
    part = layout.partition

    sigma_covs = None
    subsets = None
    if pmse_settings is not None:
        sigma_covs = _forecast.prediction_covariances(design.model(), pmse_settings.horizons)
        subsets = {"all": np.arange(part.n), "inner": np.arange(part.n_inner)}

    jobs = [(design, rep, tuple(estimators), n_lambdas, gamma, opts,
             pmse_settings, sigma_covs, subsets)
            for rep in range(design.replicates)]

    results: dict[int, dict] = {}
    failures: list[tuple[int, str]] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_replicate_job, *job): job[1] for job in jobs}
            for fut, rep in futures.items():
                try:
                    results[rep] = fut.result()
                except Exception as exc:  # noqa: BLE001 - collect and continue
                    failures.append((rep, str(exc)))
    else:
        for job in jobs:
            try:
                results[job[1]] = _replicate_job(*job)
            except Exception as exc:  # noqa: BLE001
                failures.append((job[1], str(exc)))

    if not results:
        raise NumericalError(f"every replicate failed; first error: {failures[0][1]}")
    for rep, msg in failures:
        warnings.warn(f"replicate {rep} excluded: {msg}", stacklevel=2)

    kept = sorted(results)
    est_list = list(estimators)
    n_rep = len(kept)
    alphas = np.empty((n_rep, len(est_list), part.m))
    for pos, rep in enumerate(kept):
        for e, name in enumerate(est_list):
            alphas[pos, e] = results[rep]["alphas"][name]

    coefficient_quantiles = np.percentile(alphas, QUANTILE_LEVELS, axis=0)
    coefficient_quantiles = np.transpose(coefficient_quantiles, (1, 0, 2))

    truth_counts = _cluster_counts(design.truth.values, layout)
    zero_blocks = _zero_blocks(design.truth)
    recovery = np.zeros((len(est_list), part.k))
    for e, name in enumerate(est_list):
        for pos, rep in enumerate(kept):
            counts = results[rep]["counts"][name]
            for k in range(part.k):
                ok = counts[k] == truth_counts[k]
                if ok and zero_blocks[k]:
                    blk = alphas[pos, e, k * part.n_inner:(k + 1) * part.n_inner]
                    ok = bool(np.max(np.abs(blk)) < ZERO_BLOCK_TOL)
                recovery[e, k] += ok
    recovery /= n_rep

    psi_q = None
    if STAGE_ADAPTIVE in est_list:
        psis = np.stack([results[rep]["psi"] for rep in kept])
        psi_q = np.percentile(psis, PSI_QUANTILE_LEVELS, axis=0)

    pmse_table = None
    if pmse_settings is not None:
        vals = np.empty((n_rep, len(est_list), pmse_settings.horizons, len(subsets)))
        for pos, rep in enumerate(kept):
            for e, name in enumerate(est_list):
                vals[pos, e] = results[rep]["pmse"][name]
        pmse_table = PmseTable(estimators=est_list, h_max=pmse_settings.horizons,
                               subsets=list(subsets), replicate_values=vals)

    return EnsembleSummary(
        estimators=est_list, quantile_levels=QUANTILE_LEVELS,
        coefficient_quantiles=coefficient_quantiles, alphas=alphas,
        recovery_rates=recovery, truth_cluster_counts=truth_counts,
        psi_quantiles=psi_q, pmse=pmse_table,
        n_replicates=n_rep, n_excluded=len(failures), failures=failures,
    )
