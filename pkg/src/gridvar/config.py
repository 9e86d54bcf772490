"""Run configuration: JSON schema validation and construction of domain objects.

The config file is JSON. Unknown keys are rejected anywhere in the tree so a
typo cannot silently change a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .genlasso import SolverOptions
from .grid import GridLayout, GridSpec, Stencil


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and np.isfinite(v))


_SOLVER_KEYS = {
    "max_iterations": _is_int,
    "abs_tol": _is_num,
    "rel_tol": _is_num,
    "kkt_tol": _is_num,
    "rho": _is_num,
    "fusion_tol": _is_num,
    "n_lambdas": _is_int,
    "gamma": _is_num,
}

_TRUTH_KEYS = {
    "self": _is_num,
    "left": lambda v: isinstance(v, list) and len(v) == 4 and all(_is_num(x) for x in v),
    "right": _is_num,
    "up": lambda v: isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v),
    "down": lambda v: isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v),
    "boundary": _is_num,
}

_INNOVATION_KEYS = {
    "family": lambda v: v == "exponential",
    "variance": _is_num,
    "range": _is_num,
}

_PMSE_KEYS = {
    "horizons": _is_int,
    "n_mc": _is_int,
    "spacing": _is_int,
    "burn_in": _is_int,
}

_SCHEMA = {
    "command": lambda v: isinstance(v, str),
    "seed": _is_int,
    "out": lambda v: isinstance(v, str),
    "threads": _is_int,
    "lambda": _is_num,
    "grid": {
        "nx": _is_int,
        "ny": _is_int,
        "mask": lambda v: isinstance(v, list),
    },
    "stencil": {
        "preset": lambda v: isinstance(v, str),
        "offsets": lambda v: isinstance(v, list),
    },
    "solver": _SOLVER_KEYS,
    "simulate": {
        "t": _is_int,
        "burn_in": _is_int,
        "truth": _TRUTH_KEYS,
        "alpha_csv": lambda v: isinstance(v, str),
        "innovation": _INNOVATION_KEYS,
        "write_binary": lambda v: isinstance(v, bool),
    },
    "fit": {
        "panel": lambda v: isinstance(v, str),
        "format": lambda v: v in ("auto", "csv", "binary"),
        "header": lambda v: isinstance(v, bool),
        "include_gls": lambda v: isinstance(v, bool),
        "season_labels": lambda v: isinstance(v, str),
    },
    "forecast": {
        "fit_dir": lambda v: isinstance(v, str),
        "panel": lambda v: isinstance(v, str),
        "format": lambda v: v in ("auto", "csv", "binary"),
        "header": lambda v: isinstance(v, bool),
        "horizons": _is_int,
    },
    "evaluate": {
        "models": lambda v: isinstance(v, dict) and all(
            isinstance(k, str) and isinstance(p, str) for k, p in v.items()),
        "truth": _TRUTH_KEYS,
        "alpha_csv": lambda v: isinstance(v, str),
        "innovation": _INNOVATION_KEYS,
        "horizons": _is_int,
        "n_mc": _is_int,
        "spacing": _is_int,
        "burn_in": _is_int,
    },
    "benchmark": {
        "t": _is_int,
        "k": _is_int,
        "replicates": _is_int,
        "burn_in": _is_int,
        "estimators": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
        "truth": _TRUTH_KEYS,
        "innovation": _INNOVATION_KEYS,
        "pmse": _PMSE_KEYS,
    },
}


def _validate(node, schema, path: str) -> None:
    if not isinstance(node, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, value in node.items():
        if key not in schema:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {where}")
        rule = schema[key]
        where = f"{path}.{key}" if path else key
        if isinstance(rule, dict):
            _validate(value, rule, where)
        elif not rule(value):
            raise ConfigError(f"invalid value for config key {where}: {value!r}")


@dataclass
class RunConfig:
    command: str
    seed: int
    out: str | None
    threads: int
    lam_override: float | None
    raw: dict

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return data


def make_run_config(raw: dict, command: str, seed: int | None = None,
                    out: str | None = None, threads: int | None = None,
                    lam_override: float | None = None) -> RunConfig:
    """Validate the raw config and fold in CLI overrides."""
    _validate(raw, _SCHEMA, "")
    declared = raw.get("command")
    if declared is not None and declared != command:
        raise ConfigError(
            f"config declares command {declared!r} but {command!r} was requested"
        )
    merged = dict(raw)
    merged["command"] = command
    if seed is not None:
        merged["seed"] = seed
    if out is not None:
        merged["out"] = out
    if threads is not None:
        merged["threads"] = threads
    if lam_override is not None:
        merged["lambda"] = lam_override
    return RunConfig(
        command=command,
        seed=int(merged.get("seed", 0)),
        out=merged.get("out"),
        threads=int(merged.get("threads", 1)),
        lam_override=merged.get("lambda"),
        raw=merged,
    )


def build_layout(config: RunConfig) -> GridLayout:
    """Grid layout from the config's grid/stencil sections."""
    grid_cfg = config.section("grid")
    if not grid_cfg:
        raise ConfigError("config needs a 'grid' section for this command")
    mask = grid_cfg.get("mask")
    if mask is not None:
        try:
            mask = frozenset((int(x), int(y)) for x, y in mask)
        except (TypeError, ValueError):
            raise ConfigError("grid.mask must be a list of [ix, iy] pairs") from None
    grid = GridSpec(nx=grid_cfg["nx"], ny=grid_cfg["ny"], mask=mask)

    sten_cfg = config.section("stencil") or {"preset": "rook5"}
    if "preset" in sten_cfg and "offsets" in sten_cfg:
        raise ConfigError("stencil: give either a preset or explicit offsets, not both")
    if "offsets" in sten_cfg:
        try:
            stencil = Stencil(tuple((int(dx), int(dy)) for dx, dy in sten_cfg["offsets"]))
        except (TypeError, ValueError):
            raise ConfigError("stencil.offsets must be a list of [dx, dy] pairs") from None
    else:
        stencil = Stencil.preset(sten_cfg.get("preset", "rook5"))
    return GridLayout.build(grid, stencil)


def solver_options(config: RunConfig) -> tuple[SolverOptions, int, float]:
    """Solver options plus (n_lambdas, gamma) from the solver section."""
    cfg = dict(config.section("solver"))
    n_lambdas = cfg.pop("n_lambdas", 50)
    gamma = cfg.pop("gamma", 1.0)
    opts = SolverOptions(**cfg)
    if opts.max_iterations < 1:
        raise ConfigError("solver.max_iterations must be positive")
    if n_lambdas < 2:
        raise ConfigError("solver.n_lambdas must be at least 2")
    if gamma <= 0:
        raise ConfigError("solver.gamma must be positive")
    return opts, int(n_lambdas), float(gamma)
