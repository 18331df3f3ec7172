"""Two-valued conductivity phantoms: 1 in the P-region below a junction curve, 2 above."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import Grid, ScalarField, read_field

GAMMA_P = 1.0
GAMMA_N = 2.0


@dataclass(frozen=True)
class PhantomSpec:
    """Junction curve ``y = c(x)``.

    ``linear``: the segment from ``(0, ya)`` to ``(1, yb)``.
    ``analytic``: ``c(x) = c0 + c1 sin(2 pi x)``.
    ``custom``: a cell field read from ``path``.
    """

    kind: str = "linear"
    ya: float = 0.25
    yb: float = 0.65
    c0: float = 0.5
    c1: float = 0.15
    path: str | None = None

    def __post_init__(self):
        if self.kind == "linear" and not (0 < self.ya < 1 and 0 < self.yb < 1):
            raise ValueError("linear junction must stay inside (0, 1)")
        if self.kind == "analytic" and not abs(self.c1) < min(self.c0, 1 - self.c0):
            raise ValueError("analytic junction must stay inside (0, 1)")
        if self.kind == "custom" and self.path is None:
            raise ValueError("custom phantom needs a file")
        if self.kind not in ("linear", "analytic", "custom"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")

    def curve(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return self.ya + (self.yb - self.ya) * x
        if self.kind == "analytic":
            return self.c0 + self.c1 * np.sin(2 * np.pi * x)
        raise ValueError("custom phantoms have no junction curve")

    def build(self, grid: Grid) -> ScalarField:
        """Cell field with value 2 above the curve and 1 below."""
        if self.kind == "custom":
            f = read_field(self.path)
            if f.grid != grid or f.centering != "cell":
                raise ValueError(f"{self.path}: expected a cell field on a {grid.nx}x{grid.ny} grid")
            return f
        X, Y = grid.cell_coords()
        return ScalarField(grid, np.where(Y > self.curve(X), GAMMA_N, GAMMA_P), "cell")


def from_config(cfg) -> PhantomSpec:
    return PhantomSpec(cfg.phantom, cfg.phantom_ya, cfg.phantom_yb, cfg.phantom_c0, cfg.phantom_c1,
                       cfg.phantom_file)
