"""Landweber-Kaczmarz iteration over several voltage-current pairs.

Component ``j`` maps a cell conductivity to the current trace on Gamma_1
produced by the pulse voltage ``U_j``.  One Kaczmarz step updates the
conductivity with the gradient of a single component misfit, so a cycle
over ``N`` components costs ``2 N`` boundary-value solves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .elliptic import GAMMA_MAX, GAMMA_MIN, ConductivitySolver, count_solves, measure_norm, record_solve
from .mesh import BoundarySpec, Grid, Label, ScalarField, boundary_nodes

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class VoltageBasis:
    """Pulse voltages ``U_j = 1`` on ``|t - t_j| <= delta_x`` along the source contact.

    ``t`` is the arclength coordinate of the source edge (``x`` on a
    horizontal edge, ``y`` on a vertical one) and the centres are
    ``t_j = a + (j - 1/2)(b - a)/N`` for the contact interval ``(a, b)``.
    """

    N: int = 9
    delta_x: float = 1 / 20
    spec: BoundarySpec = BoundarySpec()

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one source")
        if self.delta_x <= 0:
            raise ValueError("delta_x must be positive")
        edges = self.source_edges
        if len(edges) != 1:
            raise ValueError("the pulse basis needs exactly one source edge")
        a, b = self.spec.interval(edges[0])
        c = self.centers
        if np.any(c - self.delta_x < a - SUPPORT_TOL) or np.any(c + self.delta_x > b + SUPPORT_TOL):
            raise ValueError(
                f"pulse supports of half-width {self.delta_x} leave the source contact ({a}, {b})")

    @property
    def source_edges(self) -> list[str]:
        return [e for e in ("bottom", "top", "left", "right") if self.spec.edge_label(e) == Label.SOURCE]

    @property
    def centers(self) -> np.ndarray:
        a, b = self.spec.interval(self.source_edges[0])
        return a + (np.arange(1, self.N + 1) - 0.5) * (b - a) / self.N

    def values(self, grid: Grid, j: int) -> np.ndarray:
        """``U_j`` on the source nodes of ``grid`` (1-based ``j``)."""
        if not 1 <= j <= self.N:
            raise IndexError(f"component {j} outside 1..{self.N}")
        nodes = boundary_nodes(grid, self.spec, Label.SOURCE)
        edge = self.source_edges[0]
        t = np.array([i * grid.hx if edge in ("bottom", "top") else jj * grid.hy for i, jj in nodes])
        return (np.abs(t - self.centers[j - 1]) <= self.delta_x + SUPPORT_TOL).astype(float)


@dataclass(frozen=True, eq=False)
class DtNDataset:
    basis: VoltageBasis
    traces: tuple
    delta: float = 0.0

    def __post_init__(self):
        traces = tuple(np.asarray(t, dtype=float) for t in self.traces)
        if len(traces) != self.basis.N:
            raise ValueError(f"expected {self.basis.N} traces, got {len(traces)}")
        if len({t.shape for t in traces}) > 1:
            raise ValueError("all traces must have the same length")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        object.__setattr__(self, "traces", traces)

    @property
    def spec(self) -> BoundarySpec:
        return self.basis.spec


def component_index(k: int, N: int) -> int:
    """Component visited at step ``k`` (1-based): ``((k - 1) mod N) + 1``."""
    if k < 1:
        raise ValueError("step counter starts at 1")
    return (k - 1) % N + 1


def component_apply(gamma: ScalarField, basis: VoltageBasis, j: int) -> np.ndarray:
    """Current trace on Gamma_1 for the source ``U_j``."""
    U = basis.values(gamma.grid, j)
    return ConductivitySolver(gamma, basis.spec).dtn(U)


def frozen_strip_mask(grid: Grid, spec: BoundarySpec, width: int = 3) -> np.ndarray:
    """Cells within ``width`` cell layers of a contact (source or measurement) node."""
    if width < 0:
        raise ValueError("strip width must be non-negative")
    mask = np.zeros(grid.cell_shape, dtype=bool)
    if width == 0:
        return mask
    labels = spec.label_array(grid)
    contact = (labels == Label.SOURCE) | (labels == Label.MEASURE)
    w = min(width, grid.nx, grid.ny)
    bottom = contact[0, :-1] | contact[0, 1:]
    top = contact[-1, :-1] | contact[-1, 1:]
    left = contact[:-1, 0] | contact[1:, 0]
    right = contact[:-1, -1] | contact[1:, -1]
    mask[:w, :] |= bottom[None, :]
    mask[-w:, :] |= top[None, :]
    mask[:, :w] |= left[:, None]
    mask[:, -w:] |= right[:, None]
    return mask


def smooth_once(g: np.ndarray) -> np.ndarray:
    """One Jacobi pass of the cell Laplacian with insulated boundary: ``g + Lap g / 8`` in grid units."""
    p = np.pad(g, 1, mode="edge")
    lap = p[1:-1, :-2] + p[1:-1, 2:] + p[:-2, 1:-1] + p[2:, 1:-1] - 4 * g
    return g + lap / 8


def _component_gradient(gamma: ScalarField, dataset: DtNDataset, j: int, bounds):
    solver = ConductivitySolver(gamma, dataset.spec, bounds=bounds)
    u = solver.potential(solver.source_data(dataset.basis.values(gamma.grid, j)), "forward")
    r = solver.trace(u) - dataset.traces[j - 1]
    p = solver.potential(solver.measure_data(r), "adjoint")
    return r, solver.gradient_density(u, p), solver.segments


def _update(gamma: ScalarField, g: np.ndarray, omega: float, frozen, smoothing: bool, bounds) -> ScalarField:
    if smoothing:
        g = smooth_once(g)
    if frozen is not None:
        g = np.where(frozen, 0.0, g)
    lo, hi = bounds
    return gamma.with_values(np.clip(gamma.values - omega * g, lo, hi))


def lk_step(gamma: ScalarField, dataset: DtNDataset, k: int, omega: float,
            frozen: np.ndarray | None = None, smoothing: bool = False,
            bounds=(GAMMA_MIN, GAMMA_MAX)) -> tuple[ScalarField, float]:
    """One Kaczmarz step on component ``((k-1) mod N) + 1``.

    Returns the updated conductivity and the component residual norm
    measured before the update.  Two boundary-value solves.
    """
    j = component_index(k, dataset.basis.N)
    r, g, seg = _component_gradient(gamma, dataset, j, tuple(bounds))
    return _update(gamma, g, omega, frozen, smoothing, bounds), measure_norm(r, seg)


def estimate_operator_norm(gamma: ScalarField, basis: VoltageBasis, iterations: int = 4,
                           seed: int = 0) -> float:
    """Power-method estimate of ``max_j ||F_j'(gamma)||^2``.

    The operator ``F_j'`` maps cell perturbations (L2 norm) to traces
    (Gamma_1 norm).  Each power step costs a linearized solve and an
    adjoint solve per component; they are recorded as ``"setup"``.
    """
    grid = gamma.grid
    area = grid.hx * grid.hy
    h0 = np.random.default_rng(seed).standard_normal(grid.cell_shape)
    best = 0.0
    with count_solves() as spent:
        solver = ConductivitySolver(gamma, basis.spec)
        for j in range(1, basis.N + 1):
            u = solver.potential(solver.source_data(basis.values(grid, j)))
            h = h0 / np.sqrt(np.sum(h0**2) * area)
            lam = 0.0
            for _ in range(iterations):
                p = solver.potential(solver.measure_data(solver.linearized_trace(u, h)))
                g = solver.gradient_density(u, p)
                lam = float(np.sum(g * h) * area)
                nrm = np.sqrt(np.sum(g**2) * area)
                if nrm == 0:
                    break
                h = g / nrm
            best = max(best, lam)
    for _ in range(sum(spent.values())):
        record_solve("setup")
    return best


def default_omega(gamma: ScalarField, basis: VoltageBasis, iterations: int = 4) -> float:
    norm2 = estimate_operator_norm(gamma, basis, iterations)
    if norm2 <= 0:
        raise ValueError("vanishing linearization; cannot scale the step")
    return 1.0 / norm2


@dataclass
class CycleRecord:
    cycle: int
    residual_l2: float
    component_residuals: tuple
    misclassified_fraction: float = float("nan")
    solves: int = 0


class LKStagnation(RuntimeError):
    def __init__(self, cycle: int, history):
        super().__init__(f"Landweber-Kaczmarz misfit increased for several cycles (cycle {cycle})")
        self.cycle = cycle
        self.history = history


def full_residual(gamma: ScalarField, dataset: DtNDataset, kind: str = "setup",
                  bounds=(GAMMA_MIN, GAMMA_MAX)) -> tuple[float, list]:
    """Stacked residual norm over all components; one forward solve per component."""
    solver = ConductivitySolver(gamma, dataset.spec, bounds=bounds)
    comps = []
    for j in range(1, dataset.basis.N + 1):
        u = solver.potential(solver.source_data(dataset.basis.values(gamma.grid, j)), kind)
        comps.append(measure_norm(solver.trace(u) - dataset.traces[j - 1], solver.segments))
    return float(np.sqrt(np.sum(np.square(comps)))), comps


def lk_run(gamma0: ScalarField, dataset: DtNDataset, max_cycles: int = 100, stop_tol: float = 0.0,
           omega: float | None = None, frozen: np.ndarray | None = None, smoothing: bool = False,
           truth: ScalarField | None = None, tau_discrepancy: float = 1.1, patience: int = 5,
           bounds=(GAMMA_MIN, GAMMA_MAX), callback=None):
    """Cycles of ``N`` Kaczmarz steps.

    The misfit of a cycle is the stacked norm of the component residuals
    met during that cycle.  The run stops after ``max_cycles`` cycles or
    once this misfit is at most ``stop_tol`` (``1.1 delta`` for noisy
    data).  The check before the first cycle uses one forward solve per
    component, recorded as ``"setup"``, as is the step-size estimate when
    ``omega`` is None.  If the cycle misfit grows ``patience`` cycles in a
    row, :class:`LKStagnation` is raised.
    """
    from .metrics import misclassified_fraction

    threshold = max(stop_tol, tau_discrepancy * dataset.delta if dataset.delta > 0 else 0.0)
    N = dataset.basis.N
    if omega is None:
        omega = default_omega(gamma0, dataset.basis)
    gamma = gamma0
    res, comps = full_residual(gamma, dataset, bounds=bounds)
    mis = misclassified_fraction(gamma, truth) if truth is not None else float("nan")
    history = [CycleRecord(0, res, tuple(comps), mis, N)]
    if callback:
        callback(gamma, history[-1], None)
    increases = 0
    k = 0
    for cycle in range(1, max_cycles + 1):
        if res <= threshold:
            break
        comps = []
        for _ in range(N):
            k += 1
            gamma, rj = lk_step(gamma, dataset, k, omega, frozen, smoothing, bounds)
            comps.append(rj)
            if callback:
                callback(gamma, None, (cycle, component_index(k, N), rj))
        prev, res = res, float(np.sqrt(np.sum(np.square(comps))))
        mis = misclassified_fraction(gamma, truth) if truth is not None else float("nan")
        history.append(CycleRecord(cycle, res, tuple(comps), mis, 2 * N))
        log.debug("cycle %d: misfit %.4e", cycle, res)
        if callback:
            callback(gamma, history[-1], None)
        increases = increases + 1 if res > prev else 0
        if increases >= patience:
            raise LKStagnation(cycle, history)
    return gamma, history, omega


def landweber_run(gamma0: ScalarField, spec: BoundarySpec, U: np.ndarray, Y: np.ndarray,
                  omega: float, steps: int, frozen: np.ndarray | None = None,
                  smoothing: bool = False, bounds=(GAMMA_MIN, GAMMA_MAX)) -> list[ScalarField]:
    """Plain Landweber iteration for one voltage-current pair; returns all iterates."""
    lo, hi = bounds
    iterates = [gamma0]
    gamma = gamma0
    for _ in range(steps):
        solver = ConductivitySolver(gamma, spec, bounds=bounds)
        u = solver.potential(solver.source_data(U), "forward")
        p = solver.potential(solver.measure_data(solver.trace(u) - Y), "adjoint")
        g = solver.gradient_density(u, p)
        if smoothing:
            g = smooth_once(g)
        if frozen is not None:
            g = np.where(frozen, 0.0, g)
        gamma = gamma.with_values(np.clip(gamma.values - omega * g, lo, hi))
        iterates.append(gamma)
    return iterates
