"""Grid bookkeeping: stencils, inner/boundary partition, penalty graph, indicator map.

Cells are integer pairs ``(ix, iy)`` with ``0 <= ix < nx`` and ``0 <= iy < ny``.
A cell is *inner* when every stencil neighbor is an active cell; remaining
active cells are *boundary*. Indices are assigned inner-first, each group in
row-major order (by ``iy``, then ``ix``), so a coefficient vector always has
the layout (block 1, ..., block K, boundary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

Cell = tuple[int, int]

STENCIL_PRESETS: dict[str, tuple[Cell, ...]] = {
    # self, left, right, up, down
    "rook5": ((0, 0), (-1, 0), (1, 0), (0, 1), (0, -1)),
    # rook5 plus the four diagonals
    "queen9": (
        (0, 0), (-1, 0), (1, 0), (0, 1), (0, -1),
        (-1, 1), (1, 1), (-1, -1), (1, -1),
    ),
}


@dataclass(frozen=True)
class Stencil:
    """Set of lag-1 neighbor offsets; the first offset is always the cell itself."""

    offsets: tuple[Cell, ...]

    def __post_init__(self):
        offsets = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        object.__setattr__(self, "offsets", offsets)
        if not offsets or offsets[0] != (0, 0):
            raise ConfigError("stencil offsets must start with the self offset (0, 0)")
        if len(set(offsets)) != len(offsets):
            raise ConfigError("stencil offsets must be pairwise distinct")

    @classmethod
    def preset(cls, name: str) -> "Stencil":
        try:
            return cls(STENCIL_PRESETS[name])
        except KeyError:
            raise ConfigError(
                f"unknown stencil preset {name!r}; known presets: {sorted(STENCIL_PRESETS)}"
            ) from None

    @property
    def k(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid, optionally restricted to a mask of active cells."""

    nx: int
    ny: int
    mask: frozenset[Cell] | None = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.mask is not None:
            mask = frozenset((int(x), int(y)) for x, y in self.mask)
            object.__setattr__(self, "mask", mask)
            if not mask:
                raise ConfigError("grid mask must contain at least one active cell")
            for x, y in mask:
                if not (0 <= x < self.nx and 0 <= y < self.ny):
                    raise ConfigError(f"mask cell ({x}, {y}) outside the {self.nx}x{self.ny} grid")

    def is_active(self, cell: Cell) -> bool:
        x, y = cell
        if not (0 <= x < self.nx and 0 <= y < self.ny):
            return False
        return self.mask is None or cell in self.mask

    def active_cells(self) -> list[Cell]:
        """Active cells in row-major order (by iy, then ix)."""
        cells = [(x, y) for y in range(self.ny) for x in range(self.nx)]
        if self.mask is None:
            return cells
        return [c for c in cells if c in self.mask]

    @property
    def n(self) -> int:
        return self.nx * self.ny if self.mask is None else len(self.mask)


@dataclass(frozen=True)
class GridPartition:
    """Inner/boundary split of a grid under a stencil, with the index ordering.

    ``cells[i]`` is the cell with index ``i``; indices ``0..n_inner-1`` are the
    inner cells. ``neighbors[i, k]`` is the index of ``cells[i] + offsets[k]``
    for inner ``i``.
    """

    grid: GridSpec
    stencil: Stencil
    cells: tuple[Cell, ...]
    n_inner: int
    neighbors: np.ndarray

    def __post_init__(self):
        self.neighbors.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def n_boundary(self) -> int:
        return self.n - self.n_inner

    @property
    def k(self) -> int:
        return self.stencil.k

    @property
    def m(self) -> int:
        """Number of free coefficients: K*n_inner + n_boundary."""
        return self.k * self.n_inner + self.n_boundary

    def index_of(self, cell: Cell) -> int:
        try:
            return self.cells.index(cell)
        except ValueError:
            raise KeyError(f"cell {cell} is not active") from None

    def coordinates(self, unit_square: bool = True) -> np.ndarray:
        """Cell coordinates as an (n, 2) array, in index order.

        With ``unit_square=True`` the bounding grid is scaled so the extreme
        cells sit on the corners of [0, 1]^2 (degenerate axes collapse to 0).
        """
        coords = np.asarray(self.cells, dtype=float)
        if unit_square:
            span = np.array([max(self.grid.nx - 1, 1), max(self.grid.ny - 1, 1)], dtype=float)
            coords = coords / span
        return coords


def build_partition(grid: GridSpec, stencil: Stencil) -> GridPartition:
    """Classify active cells as inner/boundary and build the neighbor table."""
    active = grid.active_cells()
    offsets = stencil.offsets

    def is_inner(cell: Cell) -> bool:
        x, y = cell
        return all(grid.is_active((x + dx, y + dy)) for dx, dy in offsets)

    inner = [c for c in active if is_inner(c)]
    if not inner:
        raise ConfigError(
            "no active cell has all stencil neighbors on the grid; "
            "the stencil is too large for this grid"
        )
    inner_set = set(inner)
    boundary = [c for c in active if c not in inner_set]
    cells = tuple(inner + boundary)
    index = {c: i for i, c in enumerate(cells)}

    neighbors = np.empty((len(inner), stencil.k), dtype=np.int64)
    for i, (x, y) in enumerate(inner):
        for kk, (dx, dy) in enumerate(offsets):
            neighbors[i, kk] = index[(x + dx, y + dy)]
    return GridPartition(grid=grid, stencil=stencil, cells=cells,
                         n_inner=len(inner), neighbors=neighbors)


@dataclass(frozen=True)
class PenaltyGraph:
    """K copies of the inner-grid 4-adjacency graph.

    Edges are (k, i, j) with k a stencil-block index and i < j inner indices
    of directly adjacent cells. Boundary coefficients carry no edges.
    """

    partition: GridPartition
    edges: tuple[tuple[int, int, int], ...]

    @property
    def edges_per_block(self) -> int:
        return len(self.edges) // self.partition.k if self.partition.k else 0

    def block_adjacency(self) -> list[tuple[int, int]]:
        """The (i, j) pairs of one copy (identical across blocks)."""
        return [(i, j) for k, i, j in self.edges if k == 0]


def build_penalty_graph(partition: GridPartition) -> PenaltyGraph:
    """Enumerate the fusion edges: direct inner-grid neighbors, once per block."""
    index = {partition.cells[i]: i for i in range(partition.n_inner)}
    pairs = []
    for i in range(partition.n_inner):
        x, y = partition.cells[i]
        for dx, dy in ((1, 0), (0, 1)):  # each undirected pair once
            j = index.get((x + dx, y + dy))
            if j is not None:
                pairs.append((min(i, j), max(i, j)))
    pairs.sort()
    edges = tuple((k, i, j) for k in range(partition.k) for i, j in pairs)
    return PenaltyGraph(partition=partition, edges=edges)


@dataclass(frozen=True)
class IndicatorMap:
    """Placement of the coefficient vector into the transition matrix.

    Column c of the implicit n^2 x m indicator matrix holds a single one at
    vec-position ``a_cols[c]*n + a_rows[c]`` (column-major vec), i.e. the
    coefficient feeds entry ``A[a_rows[c], a_cols[c]]``. Columns are ordered
    (block 1, ..., block K, boundary), each block by inner index.
    """

    partition: GridPartition
    a_rows: np.ndarray
    a_cols: np.ndarray

    def __post_init__(self):
        self.a_rows.setflags(write=False)
        self.a_cols.setflags(write=False)

    @property
    def m(self) -> int:
        return self.a_rows.shape[0]

    @property
    def n(self) -> int:
        return self.partition.n

    def vec_rows(self) -> np.ndarray:
        """Row index in column-major vec(A) for each coefficient."""
        return self.a_cols * self.n + self.a_rows

    def to_dense(self) -> np.ndarray:
        """Materialized n^2 x m indicator matrix (tests and small problems only)."""
        p = np.zeros((self.n * self.n, self.m))
        p[self.vec_rows(), np.arange(self.m)] = 1.0
        return p


def build_indicator_map(partition: GridPartition) -> IndicatorMap:
    """Build the coefficient-to-matrix-entry index map for a partition."""
    n_i, k = partition.n_inner, partition.k
    a_rows = np.empty(partition.m, dtype=np.int64)
    a_cols = np.empty(partition.m, dtype=np.int64)
    for kk in range(k):
        block = slice(kk * n_i, (kk + 1) * n_i)
        a_rows[block] = np.arange(n_i)
        a_cols[block] = partition.neighbors[:, kk]
    bidx = np.arange(n_i, partition.n)
    a_rows[k * n_i:] = bidx
    a_cols[k * n_i:] = bidx
    return IndicatorMap(partition=partition, a_rows=a_rows, a_cols=a_cols)


@dataclass(frozen=True)
class GridLayout:
    """Partition, penalty graph, and indicator map built together for one grid."""

    partition: GridPartition
    graph: PenaltyGraph
    imap: IndicatorMap

    @classmethod
    def build(cls, grid: GridSpec, stencil: Stencil) -> "GridLayout":
        partition = build_partition(grid, stencil)
        return cls(partition=partition,
                   graph=build_penalty_graph(partition),
                   imap=build_indicator_map(partition))
