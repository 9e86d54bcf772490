"""Panel ingestion and emission: CSV, a simple binary format, deseasonalization.

CSV layout: one row per location (in grid order: inner block first, boundary
block second), one column per time point; an optional single header row is
skipped on read when ``header=True``. Binary layout: two little-endian int64
(n, T) followed by column-major float64 values.

Floats are written with 17 significant digits so read/write round-trips are
exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .grid import GridPartition
from .likelihood import TimeSeriesPanel

FLOAT_FORMAT = "%.17g"
_BINARY_HEADER = struct.Struct("<qq")


def format_float(x: float) -> str:
    return FLOAT_FORMAT % x


def write_panel_csv(path, panel: TimeSeriesPanel, header: bool = False) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(str(t) for t in range(panel.t)) + "\n")
        for row in panel.values:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def _parse_csv(path: Path, header: bool) -> np.ndarray:
    rows: list[list[float]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if lineno == 0 and header:
                continue
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            parsed = []
            for col, tok in enumerate(fields):
                try:
                    parsed.append(float(tok))
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse value {tok!r} at line {lineno + 1}, "
                        f"column {col + 1}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.asarray(rows, dtype=float)


def write_panel_binary(path, panel: TimeSeriesPanel) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_BINARY_HEADER.pack(panel.n, panel.t))
        fh.write(np.asfortranarray(panel.values).tobytes(order="F"))


def _parse_binary(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise DataError(f"{path}: truncated binary header")
    n, t = _BINARY_HEADER.unpack_from(raw)
    expected = _BINARY_HEADER.size + 8 * n * t
    if n <= 0 or t <= 0 or len(raw) != expected:
        raise DataError(f"{path}: binary payload does not match header (n={n}, T={t})")
    values = np.frombuffer(raw, dtype="<f8", offset=_BINARY_HEADER.size)
    return values.reshape((n, t), order="F").copy()


def ingest_panel(path, partition: GridPartition, fmt: str = "auto",
                 header: bool = False) -> TimeSeriesPanel:
    """Read and validate a panel against the grid.

    ``fmt`` is "csv", "binary", or "auto" (by file extension, .bin = binary).
    Rejects wrong row counts and non-finite values with cell coordinates.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    if fmt == "auto":
        fmt = "binary" if path.suffix in (".bin", ".dat") else "csv"
    if fmt == "csv":
        values = _parse_csv(path, header=header)
    elif fmt == "binary":
        values = _parse_binary(path)
    else:
        raise DataError(f"unknown panel format {fmt!r}")

    if values.shape[0] != partition.n:
        raise DataError(
            f"{path}: {values.shape[0]} rows but the grid has {partition.n} active cells"
        )
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at location row {i}, time column {j}")
    return TimeSeriesPanel(values=values, partition=partition)


@dataclass
class Climatology:
    """Per-location seasonal means, indexed by the period labels."""

    labels: list
    means: np.ndarray  # (n, n_labels)


def deseasonalize(panel: TimeSeriesPanel, period_index) -> tuple[TimeSeriesPanel, Climatology]:
    """Remove the per-location mean of each period label (e.g. day of year).

    Returns the residual panel and the climatology table needed to add the
    seasonal component back.
    """
    period_index = list(period_index)
    if len(period_index) != panel.t:
        raise DataError(
            f"period index has {len(period_index)} labels for {panel.t} time points"
        )
    labels = sorted(set(period_index))
    label_pos = {lab: i for i, lab in enumerate(labels)}
    cols = np.array([label_pos[lab] for lab in period_index])

    means = np.zeros((panel.n, len(labels)))
    for pos in range(len(labels)):
        sel = cols == pos
        means[:, pos] = panel.values[:, sel].mean(axis=1)
    residual = panel.values - means[:, cols]
    return (TimeSeriesPanel(values=residual, partition=panel.partition),
            Climatology(labels=labels, means=means))
