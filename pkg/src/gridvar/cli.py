"""Command-line front end: simulate | fit | forecast | evaluate | benchmark.

Every command reads a JSON config (--config), optionally overridden by
--seed/--out/--threads/--lambda, and writes its artifacts plus a manifest
into the output directory. Exit codes: 0 success, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy
import scipy.sparse

from . import __version__
from .config import RunConfig, build_layout, load_config_file, make_run_config, solver_options
from .errors import ConfigError, DataError, GridVarError, NumericalError
from .forecast import pmse_draws, predict, prediction_covariances
from .genlasso import LambdaTraceEntry
from .grid import GridLayout
from .likelihood import TimeSeriesPanel
from .model import (
    CoefficientVector,
    InnovationCovariance,
    TransitionMatrix,
    VarModel,
    assemble_transition,
    exponential_covariance,
)
from .panel_io import deseasonalize, format_float, ingest_panel, write_panel_binary, write_panel_csv
from .pipeline import FitReport, fit
from .simulate import (
    ESTIMATORS,
    PmseSettings,
    SimulationDesign,
    benchmark_design_7x7,
    benchmark_truth,
    run_replicates,
    simulate_panel,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _block_label(layout: GridLayout, column: int) -> tuple[str, int]:
    n_i, k = layout.partition.n_inner, layout.partition.k
    if column < k * n_i:
        return f"alpha_{column // n_i + 1}", column % n_i
    return "alpha_B", column - k * n_i


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                format_float(v) if isinstance(v, float) else str(v) for v in row
            ) + "\n")


def _write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(format_float(v) for v in row) + "\n")


def _write_coordinate_csv(path: Path, matrix: scipy.sparse.spmatrix) -> None:
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows = ((int(coo.row[i]), int(coo.col[i]), float(coo.data[i])) for i in order)
    _write_csv(path, ["row", "col", "value"], rows)


def _read_coordinate_csv(path: Path, n: int) -> scipy.sparse.csr_matrix:
    if not path.exists():
        raise DataError(f"matrix file not found: {path}")
    rows, cols, vals = [], [], []
    with path.open("r", encoding="utf-8") as fh:
        next(fh)  # header
        for line in fh:
            line = line.strip()
            if not line:
                continue
            r, c, v = line.split(",")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _read_dense_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"matrix file not found: {path}")
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_manifest(out_dir: Path, config: RunConfig) -> None:
    canonical = json.dumps(config.raw, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": config.command,
        "seed": config.seed,
        "threads": config.threads,
        "config": config.raw,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "gridvar": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(config: RunConfig) -> Path:
    if not config.out:
        raise ConfigError("an output directory is required (config 'out' or --out)")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _innovation_from_config(layout: GridLayout, section: dict) -> InnovationCovariance:
    cfg = dict(section or {})
    family = cfg.get("family", "exponential")
    if family != "exponential":
        raise ConfigError(f"unsupported innovation family {family!r}")
    return exponential_covariance(layout.partition,
                                  variance=float(cfg.get("variance", 1.0)),
                                  corr_range=float(cfg.get("range", 0.25)))


def _alpha_from_csv(path: str, layout: GridLayout) -> CoefficientVector:
    values = np.loadtxt(path, delimiter=",").ravel()
    if values.size != layout.partition.m:
        raise DataError(
            f"{path}: expected {layout.partition.m} coefficients, found {values.size}"
        )
    return CoefficientVector(values=values, partition=layout.partition)


def _truth_from_config(layout: GridLayout, section: dict) -> CoefficientVector:
    if "alpha_csv" in section:
        if "truth" in section:
            raise ConfigError("give either truth values or alpha_csv, not both")
        return _alpha_from_csv(section["alpha_csv"], layout)
    truth_cfg = section.get("truth")
    return benchmark_truth(layout, truth_cfg)


# ---------------------------------------------------------------- commands


def cmd_simulate(config: RunConfig) -> None:
    layout = build_layout(config)
    section = config.section("simulate")
    if "t" not in section:
        raise ConfigError("simulate.t is required")
    design = SimulationDesign(
        layout=layout,
        truth=_truth_from_config(layout, section),
        innovation=_innovation_from_config(layout, section.get("innovation")),
        t=section["t"],
        burn_in=section.get("burn_in", 500),
        seed=config.seed,
    )
    panel = simulate_panel(design)
    out = _out_dir(config)
    write_panel_csv(out / "panel.csv", panel)
    if section.get("write_binary", False):
        write_panel_binary(out / "panel.bin", panel)
    _write_csv(out / "truth_alpha.csv", ["block", "index", "value"],
               ((*_block_label(layout, c), float(v))
                for c, v in enumerate(design.truth.values)))
    write_manifest(out, config)


def _trace_rows(stage: str, trace: list[LambdaTraceEntry] | None):
    for entry in trace or []:
        yield (stage, float(entry.lam), float(entry.bic), entry.df, int(entry.converged))


def _report_json(report: FitReport) -> dict:
    stages = {}
    for name, rec in report.stages.items():
        stages[name] = {
            "lambda": rec.lam,
            "df": rec.df,
            "rowsum_stable": rec.rowsum_stable,
            "spectral_radius": rec.spectral_radius,
            "spectral_stable": rec.spectral_stable,
            "seconds": rec.seconds,
            "bic_trace": [
                {"lambda": e.lam, "bic": e.bic, "df": e.df, "converged": e.converged}
                for e in rec.bic_trace
            ] if rec.bic_trace else None,
            "clusters": [
                [{"value": c.value, "members": c.members} for c in block]
                for block in rec.clusters
            ] if rec.clusters is not None else None,
        }
    return {"gamma": report.gamma, "stages": stages, "notes": report.notes}


def _write_fit_outputs(out: Path, layout: GridLayout, report: FitReport) -> None:
    rows = []
    for name, rec in report.stages.items():
        for c, v in enumerate(rec.alpha):
            block, idx = _block_label(layout, c)
            rows.append((name, block, idx, float(v)))
    _write_csv(out / "alpha_stages.csv", ["stage", "block", "index", "value"], rows)

    final = report.final
    _write_matrix_csv(out / "psi_hat.csv", final.psi)
    a_mat = assemble_transition(
        CoefficientVector(final.alpha, layout.partition), layout.imap)
    _write_coordinate_csv(out / "a_hat.csv", a_mat.matrix)
    _write_csv(out / "bic_trace.csv", ["stage", "lambda", "bic", "df", "converged"],
               (row for name, rec in report.stages.items()
                for row in _trace_rows(name, rec.bic_trace)))
    with (out / "fit_report.json").open("w", encoding="utf-8") as fh:
        json.dump(_report_json(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_fit(config: RunConfig) -> None:
    layout = build_layout(config)
    section = config.section("fit")
    if "panel" not in section:
        raise ConfigError("fit.panel is required")
    panel = ingest_panel(section["panel"], layout.partition,
                         fmt=section.get("format", "auto"),
                         header=section.get("header", False))
    out = _out_dir(config)
    if "season_labels" in section:
        labels = [int(x) for x in
                  np.loadtxt(section["season_labels"], delimiter=",").ravel()]
        panel, climatology = deseasonalize(panel, labels)
        _write_csv(out / "climatology.csv", ["location", "label", "mean"],
                   ((i, lab, float(climatology.means[i, p]))
                    for i in range(panel.n)
                    for p, lab in enumerate(climatology.labels)))
    opts, n_lambdas, gamma = solver_options(config)
    report = fit(panel, layout, include_gls=section.get("include_gls", False),
                 n_lambdas=n_lambdas, gamma=gamma, opts=opts,
                 lam_override=config.lam_override)
    _write_fit_outputs(out, layout, report)
    write_manifest(out, config)


def _load_fitted_model(fit_dir: Path, layout: GridLayout) -> VarModel:
    a_mat = _read_coordinate_csv(fit_dir / "a_hat.csv", layout.partition.n)
    psi = _read_dense_csv(fit_dir / "psi_hat.csv")
    if psi.shape != (layout.partition.n,) * 2:
        raise DataError(f"{fit_dir}/psi_hat.csv has shape {psi.shape}, "
                        f"expected ({layout.partition.n}, {layout.partition.n})")
    return VarModel(transition=TransitionMatrix(matrix=a_mat),
                    innovation=InnovationCovariance(matrix=psi))


def cmd_forecast(config: RunConfig) -> None:
    layout = build_layout(config)
    section = config.section("forecast")
    for key in ("fit_dir", "panel"):
        if key not in section:
            raise ConfigError(f"forecast.{key} is required")
    model = _load_fitted_model(Path(section["fit_dir"]), layout)
    panel = ingest_panel(section["panel"], layout.partition,
                         fmt=section.get("format", "auto"),
                         header=section.get("header", False))
    h_max = section.get("horizons", 3)
    result = predict(model, panel.values[:, -1], h_max)
    out = _out_dir(config)
    _write_csv(out / "forecasts.csv", ["location"] + [f"h{h}" for h in range(1, h_max + 1)],
               ((i, *map(float, result.points[i])) for i in range(layout.partition.n)))
    _write_csv(out / "prediction_cov.csv", ["h", "row", "col", "value"],
               ((h + 1, i, j, float(result.covariances[h, i, j]))
                for h in range(h_max)
                for i in range(layout.partition.n)
                for j in range(layout.partition.n)))
    write_manifest(out, config)


def cmd_evaluate(config: RunConfig) -> None:
    layout = build_layout(config)
    section = config.section("evaluate")
    if "models" not in section or not section["models"]:
        raise ConfigError("evaluate.models must name at least one fitted-matrix CSV")
    truth = _truth_from_config(layout, section)
    innovation = _innovation_from_config(layout, section.get("innovation"))
    true_model = VarModel(
        transition=assemble_transition(truth, layout.imap), innovation=innovation)
    estimated = {
        name: _read_coordinate_csv(Path(path), layout.partition.n)
        for name, path in section["models"].items()
    }
    h_max = section.get("horizons", 3)
    subsets = {"all": np.arange(layout.partition.n),
               "inner": np.arange(layout.partition.n_inner)}
    draws = pmse_draws(true_model, estimated, h_max, subsets,
                       n_mc=section.get("n_mc", 2000),
                       spacing=section.get("spacing", 50),
                       burn_in=section.get("burn_in", 500),
                       seed=config.seed)
    out = _out_dir(config)
    rows = []
    for subset_pos, subset in enumerate(subsets):
        for h in range(h_max):
            for name, arr in draws.items():
                q = arr[h, subset_pos]
                rows.append((subset, h + 1, name, float(np.mean(q)),
                             float(np.std(q, ddof=1) / np.sqrt(q.size))))
    _write_csv(out / "pmse.csv", ["subset", "h", "estimator", "value", "se"], rows)
    write_manifest(out, config)


def cmd_benchmark(config: RunConfig) -> None:
    section = config.section("benchmark")
    design = benchmark_design_7x7(
        t=section.get("t", 500),
        k=section.get("k", 5),
        replicates=section.get("replicates", 100),
        seed=config.seed,
        values=section.get("truth"),
        variance=float(section.get("innovation", {}).get("variance", 1.0)),
        corr_range=float(section.get("innovation", {}).get("range", 0.25)),
        burn_in=section.get("burn_in", 500),
    )
    estimators = tuple(section.get("estimators", list(ESTIMATORS)))
    pmse_cfg = section.get("pmse", {})
    settings = PmseSettings(horizons=pmse_cfg.get("horizons", 3),
                            n_mc=pmse_cfg.get("n_mc", 400),
                            spacing=pmse_cfg.get("spacing", 50),
                            burn_in=pmse_cfg.get("burn_in", 500))
    opts, n_lambdas, gamma = solver_options(config)
    summary = run_replicates(design, estimators=estimators, threads=config.threads,
                             n_lambdas=n_lambdas, gamma=gamma, opts=opts,
                             pmse_settings=settings)
    out = _out_dir(config)
    layout = design.layout

    rows = []
    for e, name in enumerate(summary.estimators):
        for level_pos, level in enumerate(summary.quantile_levels):
            for c in range(layout.partition.m):
                block, idx = _block_label(layout, c)
                rows.append((name, block, idx, level,
                             float(summary.coefficient_quantiles[e, level_pos, c])))
    _write_csv(out / "ensemble_summary.csv",
               ["estimator", "block", "index", "quantile", "value"], rows)

    _write_csv(out / "recovery_rates.csv",
               ["estimator", "block", "rate", "truth_clusters"],
               ((name, f"alpha_{k + 1}", float(summary.recovery_rates[e, k]),
                 summary.truth_cluster_counts[k])
                for e, name in enumerate(summary.estimators)
                for k in range(layout.partition.k)))

    if summary.psi_quantiles is not None:
        n = layout.partition.n
        _write_csv(out / "psi_summary.csv", ["quantile", "row", "col", "value"],
                   ((lev, i, j, float(summary.psi_quantiles[p, i, j]))
                    for p, lev in enumerate((25.0, 50.0, 75.0))
                    for i in range(n) for j in range(n)))

    if summary.pmse is not None:
        _write_csv(out / "pmse.csv", ["subset", "h", "estimator", "value", "se"],
                   ((subset, h, name, summary.pmse.value(name, h, subset),
                     summary.pmse.se(name, h, subset))
                    for subset in summary.pmse.subsets
                    for h in range(1, summary.pmse.h_max + 1)
                    for name in summary.estimators))

    _write_csv(out / "exclusions.csv", ["replicate", "error"],
               ((rep, msg.replace(",", ";")) for rep, msg in summary.failures))
    write_manifest(out, config)


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridvar",
        description="Spatially structured VAR(1) modeling on grids: simulate, "
                    "fit (three-stage fused-lasso pipeline), forecast, evaluate, benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="parallel workers")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="fixed penalty level: skip BIC selection")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config_file(args.config)
        config = make_run_config(raw, args.command, seed=args.seed, out=args.out,
                                 threads=args.threads, lam_override=args.lam)
        _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, GridVarError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
