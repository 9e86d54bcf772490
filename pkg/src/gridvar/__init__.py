"""Parsimonious VAR(1) models for time series on spatial grids.

Transition matrices are sparse through a lagged-neighborhood stencil and the
nonzero coefficients are spatially clustered, estimated by penalized maximum
likelihood with an adaptive fused Lasso penalty.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, GridVarError, NumericalError, UnstableModelError
from .forecast import ForecastResult, pmse, predict, prediction_covariances
from .genlasso import (
    GenLassoProblem,
    PenaltyMatrix,
    SolveResult,
    SolverOptions,
    bic,
    build_penalty_matrix,
    kkt_check,
    lambda_grid,
    merge_hard_fusions,
    select_lambda,
    solve_admm,
)
from .grid import (
    GridLayout,
    GridPartition,
    GridSpec,
    IndicatorMap,
    PenaltyGraph,
    Stencil,
    build_indicator_map,
    build_partition,
    build_penalty_graph,
)
from .likelihood import (
    QuadraticForm,
    TimeSeriesPanel,
    build_gram,
    build_quadratic_form,
    loglik_direct,
    reduce_to_regression,
    update_psi,
)
from .model import (
    CoefficientVector,
    InnovationCovariance,
    TransitionMatrix,
    VarModel,
    assemble_transition,
    check_stability_rowsum,
    check_stability_spectral,
    exponential_covariance,
)
from .panel_io import deseasonalize, ingest_panel, write_panel_binary, write_panel_csv
from .pipeline import FitReport, block_clusters, fit, fit_adaptive, fit_fused, fit_gls, fit_ols
from .simulate import (
    EnsembleSummary,
    PmseSettings,
    SimulationDesign,
    benchmark_design_7x7,
    benchmark_truth,
    run_replicates,
    simulate_panel,
)

__all__ = [name for name in dir() if not name.startswith("_")]
