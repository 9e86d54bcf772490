"""Three-stage estimation: restricted OLS, fused Lasso, adaptive fused Lasso.

Each stage refreshes the innovation covariance from its residuals before the
next stage whitens with it. The stages run exactly once, in order; there is
no outer iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .genlasso import (
    GenLassoProblem,
    LambdaTraceEntry,
    PenaltyMatrix,
    SolverOptions,
    build_penalty_matrix,
    fused_labels,
    fusion_tolerance,
    merge_hard_fusions,
    select_lambda,
    solve_admm,
)
from .grid import GridLayout
from .likelihood import TimeSeriesPanel, build_quadratic_form, update_psi
from .model import (
    CoefficientVector,
    InnovationCovariance,
    assemble_transition,
    check_stability_rowsum,
    check_stability_spectral,
)

STAGE_OLS = "ols"
STAGE_GLS = "gls"
STAGE_FUSED = "fused"
STAGE_ADAPTIVE = "adaptive"


@dataclass
class BlockCluster:
    """One fused component within a coefficient block."""

    value: float
    members: list[int]


@dataclass
class StageRecord:
    name: str
    alpha: np.ndarray
    psi: np.ndarray
    lam: float | None
    df: int | None
    bic_trace: list[LambdaTraceEntry] | None
    rowsum_stable: bool
    spectral_radius: float
    spectral_stable: bool
    seconds: float
    clusters: list[list[BlockCluster]] | None = None


@dataclass
class FitReport:
    layout: GridLayout
    stages: dict[str, StageRecord]
    gamma: float
    notes: list[str] = field(default_factory=list)

    def stage(self, name: str) -> StageRecord:
        return self.stages[name]

    @property
    def final(self) -> StageRecord:
        return self.stages[STAGE_ADAPTIVE]


def block_clusters(alpha: np.ndarray, layout: GridLayout,
                   tol: float | None = None) -> list[list[BlockCluster]]:
    """Fused components per block: members (inner indices) and shared value."""
    pen = build_penalty_matrix(layout.graph)
    if tol is None:
        tol = fusion_tolerance(alpha)
    labels = fused_labels(alpha, pen, tol)
    part = layout.partition
    out: list[list[BlockCluster]] = []
    for k in range(part.k):
        sl = slice(k * part.n_inner, (k + 1) * part.n_inner)
        blk_labels, blk_vals = labels[sl], alpha[sl]
        clusters: list[BlockCluster] = []
        seen: dict[int, int] = {}
        for i, lab in enumerate(blk_labels):
            if lab not in seen:
                seen[lab] = len(clusters)
                clusters.append(BlockCluster(value=0.0, members=[]))
            clusters[seen[lab]].members.append(i)
        for c in clusters:
            c.value = float(np.mean(blk_vals[c.members]))
        out.append(clusters)
    return out


def _stage_record(name, panel, layout, alpha, psi, lam=None, df=None, trace=None,
                  seconds=0.0, with_clusters=False) -> StageRecord:
    a_mat = assemble_transition(CoefficientVector(alpha, layout.partition), layout.imap)
    spectral_ok, radius = check_stability_spectral(a_mat)
    return StageRecord(
        name=name, alpha=alpha, psi=psi.matrix, lam=lam, df=df, bic_trace=trace,
        rowsum_stable=check_stability_rowsum(a_mat),
        spectral_radius=radius, spectral_stable=spectral_ok, seconds=seconds,
        clusters=block_clusters(alpha, layout) if with_clusters else None,
    )


def fit_ols(panel: TimeSeriesPanel, layout: GridLayout,
            opts: SolverOptions | None = None) -> tuple[np.ndarray, InnovationCovariance]:
    """Stage I: restricted OLS (identity innovation covariance, no penalty)."""
    identity = InnovationCovariance(matrix=np.eye(panel.n))
    quad = build_quadratic_form(panel, layout.imap, identity)
    pen = build_penalty_matrix(layout.graph)
    res = solve_admm(GenLassoProblem.from_quadratic_form(quad, pen, 0.0), opts)
    a_mat = assemble_transition(CoefficientVector(res.alpha, layout.partition), layout.imap)
    return res.alpha, update_psi(panel, a_mat)


def fit_gls(panel: TimeSeriesPanel, layout: GridLayout, psi: InnovationCovariance,
            opts: SolverOptions | None = None) -> np.ndarray:
    """Restricted GLS: the penalized problem at lambda = 0 under the stage-I covariance."""
    quad = build_quadratic_form(panel, layout.imap, psi)
    pen = build_penalty_matrix(layout.graph)
    return solve_admm(GenLassoProblem.from_quadratic_form(quad, pen, 0.0), opts).alpha


def fit_fused(panel: TimeSeriesPanel, layout: GridLayout, psi: InnovationCovariance,
              n_lambdas: int = 50, opts: SolverOptions | None = None,
              lam_override: float | None = None):
    """Stage II: unit-weight fused Lasso with BIC-selected lambda.

    Returns (alpha, refreshed covariance, selected lambda, BIC trace).
    """
    quad = build_quadratic_form(panel, layout.imap, psi)
    pen = build_penalty_matrix(layout.graph)
    if lam_override is not None:
        res = solve_admm(GenLassoProblem.from_quadratic_form(quad, pen, lam_override), opts)
        lam, trace = lam_override, None
    else:
        sel = select_lambda(quad.x, quad.y, pen, panel.t, n_lambdas=n_lambdas, opts=opts)
        res, lam, trace = sel.result, sel.lam, sel.trace
    a_mat = assemble_transition(CoefficientVector(res.alpha, layout.partition), layout.imap)
    return res.alpha, update_psi(panel, a_mat), lam, trace


def fit_adaptive(panel: TimeSeriesPanel, layout: GridLayout, alpha_pilot: np.ndarray,
                 psi: InnovationCovariance, gamma: float = 1.0, n_lambdas: int = 50,
                 opts: SolverOptions | None = None, lam_override: float | None = None):
    """Stage III: fused Lasso with weights |pilot difference|^-gamma.

    Pilot differences inside the fusion tolerance become hard fusions: the
    joined coefficients are merged into one variable before solving.

    Returns (alpha, refreshed covariance, selected lambda, BIC trace, df).
    """
    opts = opts or SolverOptions()
    quad = build_quadratic_form(panel, layout.imap, psi)
    pen_unit = build_penalty_matrix(layout.graph)
    diffs = np.abs(pen_unit.diffs(alpha_pilot))
    hard = diffs <= fusion_tolerance(alpha_pilot, opts.fusion_tol)
    with np.errstate(divide="ignore"):
        weights = np.where(hard, np.inf, diffs ** -gamma)
    reduction = merge_hard_fusions(pen_unit.with_weights(weights))
    x_red = reduction.reduce_design(quad.x)

    if reduction.penalty.r == 0 or lam_override is not None:
        lam_sel = float(lam_override) if lam_override is not None else 0.0
        res = solve_admm(GenLassoProblem(x=x_red, y=quad.y, penalty=reduction.penalty,
                                         lam=lam_sel), opts)
        trace = None
    else:
        sel = select_lambda(x_red, quad.y, reduction.penalty, panel.t,
                            n_lambdas=n_lambdas, opts=opts)
        res, lam_sel, trace = sel.result, sel.lam, sel.trace
    alpha = reduction.expand(res.alpha)
    a_mat = assemble_transition(CoefficientVector(alpha, layout.partition), layout.imap)
    return alpha, update_psi(panel, a_mat), lam_sel, trace, res.df


def fit(panel: TimeSeriesPanel, layout: GridLayout, include_gls: bool = False,
        n_lambdas: int = 50, gamma: float = 1.0, opts: SolverOptions | None = None,
        lam_override: float | None = None) -> FitReport:
    """Run the full three-stage pipeline and assemble the report.

    ``include_gls`` additionally records the restricted GLS estimate (stage II
    at lambda = 0), used by the simulation comparisons. ``lam_override`` skips
    BIC selection in both penalized stages.
    """
    if panel.t - 1 < panel.n:
        raise DataError(
            f"T-1 = {panel.t - 1} < n = {panel.n}: the residual covariance would be "
            "singular; provide a longer series"
        )
    opts = opts or SolverOptions()
    stages: dict[str, StageRecord] = {}

    t0 = time.perf_counter()
    alpha0, psi1 = fit_ols(panel, layout, opts)
    stages[STAGE_OLS] = _stage_record(STAGE_OLS, panel, layout, alpha0, psi1,
                                      seconds=time.perf_counter() - t0)

    if include_gls:
        t0 = time.perf_counter()
        alpha_gls = fit_gls(panel, layout, psi1, opts)
        stages[STAGE_GLS] = _stage_record(STAGE_GLS, panel, layout, alpha_gls, psi1,
                                          lam=0.0, seconds=time.perf_counter() - t0)

    t0 = time.perf_counter()
    alpha1, psi2, lam1, trace1 = fit_fused(panel, layout, psi1, n_lambdas=n_lambdas,
                                           opts=opts, lam_override=lam_override)
    stages[STAGE_FUSED] = _stage_record(STAGE_FUSED, panel, layout, alpha1, psi2,
                                        lam=lam1, trace=trace1,
                                        seconds=time.perf_counter() - t0,
                                        with_clusters=True)

    t0 = time.perf_counter()
    alpha2, psi3, lam2, trace2, df2 = fit_adaptive(panel, layout, alpha1, psi2,
                                                   gamma=gamma, n_lambdas=n_lambdas,
                                                   opts=opts, lam_override=lam_override)
    stages[STAGE_ADAPTIVE] = _stage_record(STAGE_ADAPTIVE, panel, layout, alpha2, psi3,
                                           lam=lam2, df=df2, trace=trace2,
                                           seconds=time.perf_counter() - t0,
                                           with_clusters=True)

    report = FitReport(layout=layout, stages=stages, gamma=gamma)
    for name, rec in stages.items():
        if not rec.spectral_stable:
            report.notes.append(
                f"stage {name}: estimated transition matrix is not stable "
                f"(spectral radius {rec.spectral_radius:.4f})"
            )
    return report
