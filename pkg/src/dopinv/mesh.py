"""Rectangular grids on the unit square, boundary labelling and scalar fields.

Potentials (u, p, V0, C) live on grid nodes.  Conductivities and level-set
functions live on grid cells, one value per ``hx x hy`` pixel, so that a
piecewise-constant coefficient with interfaces on grid lines is represented
exactly by the finite-volume stencil in :mod:`dopinv.elliptic`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

EDGES = ("bottom", "top", "left", "right")


class Label(enum.IntEnum):
    INTERIOR = 0
    INSULATING = 1
    SOURCE = 2
    MEASURE = 3

    @classmethod
    def parse(cls, value: "Label | str") -> "Label":
        if isinstance(value, Label):
            return value
        aliases = {
            "insulating": cls.INSULATING,
            "neumann": cls.INSULATING,
            "source": cls.SOURCE,
            "gamma0": cls.SOURCE,
            "measure": cls.MEASURE,
            "gamma1": cls.MEASURE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown boundary label {value!r}") from None


# corner resolution: measurement contact > source contact > insulating
_PRECEDENCE = {Label.INSULATING: 0, Label.SOURCE: 1, Label.MEASURE: 2}


@dataclass(frozen=True)
class Grid:
    """Node-centred uniform grid on [0, 1]^2 with ``nx`` x ``ny`` nodes."""

    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.ny - 1, self.nx - 1)

    def shape(self, centering: str = "node") -> tuple[int, int]:
        if centering == "node":
            return self.node_shape
        if centering == "cell":
            return self.cell_shape
        raise ValueError(f"unknown centering {centering!r}")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(X, Y)`` of shape ``(ny, nx)``; node (i, j) is ``(i*hx, j*hy)``."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y)

    def cell_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx - 1) + 0.5) * self.hx
        y = (np.arange(self.ny - 1) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def coords(self, centering: str = "node") -> tuple[np.ndarray, np.ndarray]:
        return self.node_coords() if centering == "node" else self.cell_coords()

    def node_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights at the nodes (sum to 1)."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wy, wx)

    def flat_index(self, i: int, j: int) -> int:
        return j * self.nx + i


@dataclass(frozen=True)
class BoundarySpec:
    """Assignment of the four edges of the unit square to contacts.

    ``intervals`` optionally restricts a contact to part of its edge; it is a
    tuple of ``(edge, lo, hi)`` with the coordinate running along the edge
    (x for bottom/top, y for left/right).  Nodes of the edge outside the
    interval are insulating.  Corner nodes take the strongest label of the
    edges that meet there (Dirichlet beats Neumann, measurement beats source).
    """

    bottom: Label = Label.MEASURE
    top: Label = Label.SOURCE
    left: Label = Label.INSULATING
    right: Label = Label.INSULATING
    intervals: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self):
        for edge in EDGES:
            object.__setattr__(self, edge, Label.parse(getattr(self, edge)))
            if getattr(self, edge) == Label.INTERIOR:
                raise ValueError("an edge cannot be labelled interior")
        for edge, lo, hi in self.intervals:
            if edge not in EDGES:
                raise ValueError(f"unknown edge {edge!r}")
            if not 0.0 <= lo < hi <= 1.0:
                raise ValueError(f"bad interval ({lo}, {hi}) on {edge}")

    @classmethod
    def default(cls) -> "BoundarySpec":
        return cls()

    def edge_label(self, edge: str) -> Label:
        return getattr(self, edge)

    def interval(self, edge: str) -> tuple[float, float]:
        for e, lo, hi in self.intervals:
            if e == edge:
                return (lo, hi)
        return (0.0, 1.0)

    def _edge_nodes(self, grid: Grid, edge: str):
        """Yield ``(i, j, t)`` for the nodes of one edge, t the edge coordinate."""
        if edge in ("bottom", "top"):
            j = 0 if edge == "bottom" else grid.ny - 1
            for i in range(grid.nx):
                yield i, j, i * grid.hx
        else:
            i = 0 if edge == "left" else grid.nx - 1
            for j in range(grid.ny):
                yield i, j, j * grid.hy

    def _edge_node_label(self, edge: str, t: float) -> Label:
        label = self.edge_label(edge)
        if label == Label.INSULATING:
            return label
        lo, hi = self.interval(edge)
        if lo - 1e-12 <= t <= hi + 1e-12:
            return label
        return Label.INSULATING

    def label_array(self, grid: Grid) -> np.ndarray:
        """Integer array of shape ``(ny, nx)`` holding the :class:`Label` of every node."""
        labels = np.full(grid.node_shape, int(Label.INTERIOR), dtype=np.int8)
        for edge in EDGES:
            for i, j, t in self._edge_nodes(grid, edge):
                new = self._edge_node_label(edge, t)
                old = Label(labels[j, i])
                if old == Label.INTERIOR or _PRECEDENCE[new] > _PRECEDENCE[old]:
                    labels[j, i] = int(new)
        return labels

    def contact_lengths(self, grid: Grid) -> np.ndarray:
        """Length of contact boundary attributed to each node (zero off contacts).

        A node in the middle of a contact owns one mesh width of it; a node at
        the end of an edge owns half of one.
        """
        labels = self.label_array(grid)
        seg = np.zeros(grid.node_shape)
        for edge in EDGES:
            h = grid.hx if edge in ("bottom", "top") else grid.hy
            n = grid.nx if edge in ("bottom", "top") else grid.ny
            for k, (i, j, t) in enumerate(self._edge_nodes(grid, edge)):
                lab = self._edge_node_label(edge, t)
                if lab == Label.INSULATING or lab != labels[j, i]:
                    continue
                seg[j, i] += 0.5 * h if k in (0, n - 1) else h
        return seg

    def validate(self, grid: Grid) -> None:
        labels = self.label_array(grid)
        if not np.any(labels == Label.SOURCE):
            raise ValueError("source contact (Gamma_0) has no nodes on this grid")
        if not np.any(labels == Label.MEASURE):
            raise ValueError("measurement contact (Gamma_1) has no nodes on this grid")


def boundary_nodes(grid: Grid, spec: BoundarySpec, label: Label | str) -> list[tuple[int, int]]:
    """Ordered ``(i, j)`` nodes of the boundary carrying ``label``.

    Edges are visited bottom, top, left, right; within an edge nodes follow
    the increasing edge coordinate.  Each node is listed once.
    """
    label = Label.parse(label)
    if label == Label.INTERIOR:
        raise ValueError("interior is not a boundary label")
    spec.validate(grid)
    labels = spec.label_array(grid)
    seen: set[tuple[int, int]] = set()
    out = []
    for edge in EDGES:
        for i, j, _ in spec._edge_nodes(grid, edge):
            if labels[j, i] == label and (i, j) not in seen:
                seen.add((i, j))
                out.append((i, j))
    return out


def node_index_array(nodes: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Split a node list into ``(j, i)`` index arrays usable on ``(ny, nx)`` arrays."""
    if not nodes:
        return np.array([], dtype=int), np.array([], dtype=int)
    ii, jj = zip(*nodes)
    return np.asarray(jj), np.asarray(ii)


class ScalarField:
    """Real values on the nodes or cells of a :class:`Grid`.

    ``values`` is stored read-only with shape ``(ny, nx)`` for nodes and
    ``(ny - 1, nx - 1)`` for cells; row ``j`` is the ``j``-th row from the
    bottom, so ``values.ravel()`` is row-major with j outer and i inner.
    """

    __slots__ = ("grid", "values", "centering")

    def __init__(self, grid: Grid, values, centering: str = "node"):
        shape = grid.shape(centering)
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim == 1 and arr.size == shape[0] * shape[1]:
            arr = arr.reshape(shape)
        if arr.shape != shape:
            raise ValueError(f"{centering} field on {grid} needs shape {shape}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "centering", centering)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    @classmethod
    def constant(cls, grid: Grid, c: float, centering: str = "node") -> "ScalarField":
        return cls(grid, np.full(grid.shape(centering), float(c)), centering)

    @classmethod
    def from_function(cls, grid: Grid, fn, centering: str = "node") -> "ScalarField":
        X, Y = grid.coords(centering)
        return cls(grid, np.broadcast_to(fn(X, Y), X.shape), centering)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.centering)

    def _check(self, other: "ScalarField") -> None:
        if other.grid != self.grid or other.centering != self.centering:
            raise ValueError("field arithmetic needs identical grids and centering")

    def _binary(self, other, op):
        if isinstance(other, ScalarField):
            self._check(other)
            return self.with_values(op(self.values, other.values))
        return self.with_values(op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.centering == other.centering
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"ScalarField({self.grid.nx}x{self.grid.ny}, {self.centering})"


def nodes_to_cells(f: ScalarField) -> ScalarField:
    """Average the four corner values of every cell."""
    if f.centering != "node":
        raise ValueError("expected a nodal field")
    v = f.values
    avg = 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
    return ScalarField(f.grid, avg, "cell")


class Norms(NamedTuple):
    l2: float
    h1_semi: float
    bv: float


def norms(f: ScalarField) -> Norms:
    """Discrete L2 norm, H1 seminorm and anisotropic total variation.

    Cell fields use the midpoint rule (weight ``hx*hy`` per cell); nodal
    fields use trapezoidal weights.  Differences are forward differences
    between neighbouring values, weighted by the length of the face they
    cross (half length along the boundary for nodal fields).
    """
    g = f.grid
    v = f.values
    hx, hy = g.hx, g.hy
    dx = np.diff(v, axis=1)
    dy = np.diff(v, axis=0)
    if f.centering == "cell":
        l2sq = np.sum(v**2) * hx * hy
        wdx = np.full(dx.shape, hy)
        wdy = np.full(dy.shape, hx)
    else:
        l2sq = np.sum(v**2 * g.node_weights())
        wdx = np.full(dx.shape, hy)
        wdx[[0, -1], :] *= 0.5
        wdy = np.full(dy.shape, hx)
        wdy[:, [0, -1]] *= 0.5
    h1sq = np.sum((dx / hx) ** 2 * hx * wdx) + np.sum((dy / hy) ** 2 * hy * wdy)
    bv = np.sum(np.abs(dx) * wdx) + np.sum(np.abs(dy) * wdy)
    return Norms(float(np.sqrt(l2sq)), float(np.sqrt(h1sq)), float(bv))


def write_field(path, f: ScalarField) -> None:
    """Write ``f`` in the ASCII field format (17 significant digits, bottom row first).

    Nodal fields get the header ``field <nx> <ny>``; cell fields write their
    own value counts followed by the token ``cell``.
    """
    rows, cols = f.values.shape
    header = f"field {cols} {rows}" + (" cell" if f.centering == "cell" else "")
    lines = [header]
    for row in f.values:
        lines.append(" ".join(format(float(x), ".17g") for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) not in (3, 4) or head[0] != "field":
        raise ValueError(f"{path}: not a field file")
    cols, rows = int(head[1]), int(head[2])
    centering = "cell" if len(head) == 4 and head[3] == "cell" else "node"
    data = [list(map(float, line.split())) for line in text[1:] if line.strip()]
    arr = np.array(data, dtype=float)
    if arr.shape != (rows, cols):
        raise ValueError(f"{path}: expected {rows} rows of {cols} values, got {arr.shape}")
    grid = Grid(cols + 1, rows + 1) if centering == "cell" else Grid(cols, rows)
    return ScalarField(grid, arr, centering)
