"""Level-set reconstruction of a two-valued conductivity from one voltage-current pair.

The unknown junction is the zero level set of a cell-centred function
``phi``; the conductivity is ``P(phi)`` (2 where ``phi > 0``, 1 where
``phi < 0``).  One iteration performs

1. a forward solve for the residual ``r = F(P_eps(phi)) - Y``,
2. an adjoint solve for ``w = F'(P_eps(phi))^* r``,
3. a Neumann solve of ``(Lap - I) v = P_eps'(phi) (w - beta P_eps'(phi) kappa)``,
4. the update ``phi <- phi + tau v``.

The step ``tau`` is halved while the Tikhonov functional would increase.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import ConductivitySolver, count_solves, measure_norm, record_solve
from .mesh import BoundarySpec, Grid, Label, ScalarField, norms
from .metrics import misclassified_fraction

log = logging.getLogger(__name__)

ETA = 1e-8


class StagnationError(RuntimeError):
    """The functional increased for every step of the backtracking schedule."""

    def __init__(self, iteration: int, objective: float, trial: float, step: float, history):
        super().__init__(
            f"level-set iteration stagnated at iteration {iteration}: "
            f"G = {objective:.6e}, best trial {trial:.6e} at step {step:.3e}"
        )
        self.iteration = iteration
        self.objective = objective
        self.history = history


@dataclass(frozen=True, eq=False)
class InverseDatum:
    """One voltage-current pair: ``U`` on the source nodes, ``Y_delta`` on the measurement nodes."""

    spec: BoundarySpec
    U: np.ndarray
    Y_delta: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("noise level delta must be non-negative")
        object.__setattr__(self, "U", np.asarray(self.U, dtype=float))
        object.__setattr__(self, "Y_delta", np.asarray(self.Y_delta, dtype=float))


@dataclass(frozen=True, eq=False)
class LevelSetState:
    phi: ScalarField
    phi0: ScalarField
    eps: float
    beta: float = 1e-2
    alpha: float = 1e-3
    step: float = 1.0
    iter: int = 0
    pin_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.phi.centering != "cell" or self.phi0.centering != "cell":
            raise ValueError("level-set functions are cell-centred")
        if self.phi.grid != self.phi0.grid:
            raise ValueError("phi and phi0 must share one grid")
        if self.eps <= 0 or self.beta <= 0 or self.step <= 0:
            raise ValueError("eps, beta and step must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.pin_mask is not None:
            m = np.asarray(self.pin_mask, dtype=bool)
            if m.shape != self.phi.grid.cell_shape:
                raise ValueError("pin mask must have the cell shape")
            object.__setattr__(self, "pin_mask", m)

    @property
    def grid(self) -> Grid:
        return self.phi.grid


def measure_layer_mask(grid: Grid, spec: BoundarySpec) -> np.ndarray:
    """Cells sharing an edge with the measurement contact."""
    m = spec.label_array(grid) == Label.MEASURE
    horiz = m[:, :-1] & m[:, 1:]
    vert = m[:-1, :] & m[1:, :]
    return horiz[:-1] | horiz[1:] | vert[:, :-1] | vert[:, 1:]


def check_pin_mask(mask: np.ndarray, grid: Grid, spec: BoundarySpec) -> None:
    if np.any(mask & ~measure_layer_mask(grid, spec)):
        raise ValueError("pinned cells must lie in the layer adjacent to the measurement contact")


# ---------------------------------------------------------------------------
# projections


def project(phi: ScalarField) -> ScalarField:
    """Two-valued conductivity: 2 where ``phi > 0``, 1 where ``phi < 0``, 1.5 on ``phi == 0``."""
    v = phi.values
    return phi.with_values(np.where(v > 0, 2.0, np.where(v < 0, 1.0, 1.5)))


def project_smooth(phi: ScalarField, eps: float) -> tuple[ScalarField, ScalarField]:
    """Piecewise-linear ramp from 1 to 2 over ``(-eps, eps)`` and its derivative."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = phi.values
    P = 1.0 + np.clip((v + eps) / (2 * eps), 0.0, 1.0)
    dP = np.where(np.abs(v) < eps, 1.0 / (2 * eps), 0.0)
    return phi.with_values(P), phi.with_values(dP)


# ---------------------------------------------------------------------------
# gradient pieces


def adjoint_gradient(gamma: ScalarField, datum: InverseDatum,
                     solver: ConductivitySolver | None = None):
    """Residual on Gamma_1 and the L2 gradient of ``0.5 * ||F(gamma) - Y||^2``.

    Two boundary-value solves: the forward potential ``u`` and the adjoint
    potential ``p`` (the residual on Gamma_1, zero on Gamma_0, insulated
    elsewhere).  The gradient is ``-grad u . grad p`` per cell.
    """
    solver = solver or ConductivitySolver(gamma, datum.spec)
    u = solver.potential(solver.source_data(datum.U), "forward")
    residual = solver.trace(u) - datum.Y_delta
    p = solver.potential(solver.measure_data(residual), "adjoint")
    w = gamma.with_values(solver.gradient_density(u, p))
    return residual, w


def _forward_gradient(v: np.ndarray, hx: float, hy: float):
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, :-1] = (v[:, 1:] - v[:, :-1]) / hx
    gy[:-1, :] = (v[1:, :] - v[:-1, :]) / hy
    return gx, gy


def curvature(phi: ScalarField, eps: float, eta: float = ETA) -> ScalarField:
    """``div(grad P / |grad P|)`` of the smoothed projection ``P = P_eps(phi)``.

    Forward differences for the gradient (zero flux across the boundary),
    backward differences for the divergence, gradient magnitudes floored at
    ``eta``.  Since ``P_eps`` is monotone, the unit normal of ``P`` equals
    that of ``phi`` wherever ``grad P`` is nonzero; the normals are taken
    from ``phi`` so that the clipped ramp does not create spurious jumps at
    the edge of the band.  Cells where ``P`` is locally constant (all
    gradients in the stencil below ``eta``) get zero.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    hx, hy = phi.grid.hx, phi.grid.hy
    gx, gy = _forward_gradient(phi.values, hx, hy)
    mag = np.maximum(np.hypot(gx, gy), eta)
    nx_, ny_ = gx / mag, gy / mag
    div = np.zeros_like(nx_)
    div[:, 0] += nx_[:, 0] / hx
    div[:, 1:] += (nx_[:, 1:] - nx_[:, :-1]) / hx
    div[0, :] += ny_[0, :] / hy
    div[1:, :] += (ny_[1:, :] - ny_[:-1, :]) / hy
    steep = np.hypot(*_forward_gradient(project_smooth(phi, eps)[0].values, hx, hy)) >= eta
    active = steep.copy()
    active[:, 1:] |= steep[:, :-1]
    active[1:, :] |= steep[:-1, :]
    return phi.with_values(np.where(active, div, 0.0))


@functools.lru_cache(maxsize=8)
def _helmholtz(nx: int, ny: int):
    """Factorization of ``I - Lap_h`` on the cell grid with insulated boundary."""
    grid = Grid(nx, ny)
    mx, my = grid.cell_shape[1], grid.cell_shape[0]

    def lap1d(n, h):
        main = np.full(n, -2.0)
        main[[0, -1]] = -1.0
        return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h**2

    L = sp.kron(sp.identity(my), lap1d(mx, grid.hx)) + sp.kron(lap1d(my, grid.hy), sp.identity(mx))
    A = (sp.identity(mx * my) - L).tocsc()
    return A, spla.splu(A)


def helmholtz_matrix(grid: Grid) -> sp.csc_matrix:
    """Matrix of ``I - Lap_h`` (the negative of the velocity operator)."""
    return _helmholtz(grid.nx, grid.ny)[0]


def velocity_rhs(state: LevelSetState, w: ScalarField) -> np.ndarray:
    _, dP = project_smooth(state.phi, state.eps)
    kappa = curvature(state.phi, state.eps)
    d = dP.values
    return d * (w.values - state.beta * d * kappa.values)


def solve_velocity_equation(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(Lap_h - I) v = rhs`` with homogeneous Neumann conditions."""
    _, lu = _helmholtz(grid.nx, grid.ny)
    v = -lu.solve(np.ascontiguousarray(rhs, dtype=float).ravel())
    record_solve("velocity")
    return v.reshape(grid.cell_shape)


def velocity_solve(state: LevelSetState, w: ScalarField) -> ScalarField:
    if w.grid != state.grid or w.centering != "cell":
        raise ValueError("gradient must be a cell field on the level-set grid")
    v = solve_velocity_equation(state.grid, velocity_rhs(state, w))
    if state.pin_mask is not None:
        v = np.where(state.pin_mask, 0.0, v)
    return state.phi.with_values(v)


# ---------------------------------------------------------------------------
# functional and evolution


def _regularization(state: LevelSetState) -> float:
    if state.alpha == 0:
        return 0.0
    bv = norms(project(state.phi)).bv
    dn = norms(state.phi - state.phi0)
    return state.alpha * (2 * state.beta * bv + dn.l2**2 + dn.h1_semi**2)


def tikhonov_value(state: LevelSetState, datum: InverseDatum, residual: np.ndarray | None = None,
                   segments: np.ndarray | None = None) -> float:
    """``||F(P_eps(phi)) - Y||^2 + alpha (2 beta |P(phi)|_BV + ||phi - phi0||_H1^2)``.

    Pass ``residual`` (and the contact ``segments``) to skip the forward solve.
    """
    if residual is None or segments is None:
        gamma, _ = project_smooth(state.phi, state.eps)
        solver = ConductivitySolver(gamma, datum.spec)
        residual = solver.dtn(datum.U) - datum.Y_delta
        segments = solver.segments
    return measure_norm(residual, segments) ** 2 + _regularization(state)


@dataclass
class IterationRecord:
    iter: int
    residual_l2: float
    G_alpha: float
    misclassified_fraction: float
    step: float = 0.0
    halvings: int = 0
    solves: int = 0


def _forward(phi: ScalarField, eps: float, datum: InverseDatum, kind: str):
    gamma, _ = project_smooth(phi, eps)
    solver = ConductivitySolver(gamma, datum.spec)
    u = solver.potential(solver.source_data(datum.U), kind)
    return gamma, solver, u, solver.trace(u) - datum.Y_delta


def evolve(state: LevelSetState, datum: InverseDatum, max_iter: int = 500, stop_tol: float = 0.0,
           truth: ScalarField | None = None, max_halvings: int = 20, tau_discrepancy: float = 1.1,
           callback=None):
    """Run the level-set iteration.

    Stops after ``max_iter`` iterations or once the residual norm drops to
    ``stop_tol`` (or to ``tau_discrepancy * delta`` for noisy data).
    Returns ``(final_state, history)``; ``history[0]`` describes the
    initial guess and ``history[k]`` the iterate after ``k`` updates.

    Solve accounting: the forward solve at the accepted trial point is the
    forward solve of the next iteration, so each iteration performs one
    adjoint, one velocity and one forward solve.  The forward solve for the
    initial guess is recorded as ``"setup"`` and forward solves at rejected
    trial steps as ``"backtrack"``.
    """
    threshold = max(stop_tol, tau_discrepancy * datum.delta if datum.delta > 0 else 0.0)
    gamma, solver, u, r = _forward(state.phi, state.eps, datum, "setup")
    res = measure_norm(r, solver.segments)
    G = res**2 + _regularization(state)
    mis = misclassified_fraction(project(state.phi), truth) if truth is not None else float("nan")
    history = [IterationRecord(state.iter, res, G, mis, solves=1)]
    if callback:
        callback(state, history[-1])
    for _ in range(max_iter):
        if res <= threshold:
            break
        p = solver.potential(solver.measure_data(r), "adjoint")
        prior = state.phi.values - state.phi0.values
        if state.pin_mask is not None:
            prior = np.where(state.pin_mask, 0.0, prior)
        w = gamma.with_values(solver.gradient_density(u, p))
        v = velocity_solve(state, w).values - state.alpha * prior
        tau = state.step
        best = np.inf
        for halving in range(max_halvings + 1):
            trial = replace(state, phi=state.phi.with_values(state.phi.values + tau * v),
                            iter=state.iter + 1)
            with count_solves():
                t_gamma, t_solver, t_u, t_r = _forward(trial.phi, state.eps, datum, "trial")
            t_res = measure_norm(t_r, t_solver.segments)
            t_G = t_res**2 + _regularization(trial)
            best = min(best, t_G)
            if t_G <= G:
                record_solve("forward")
                break
            record_solve("backtrack")
            tau *= 0.5
        else:
            raise StagnationError(state.iter, G, best, tau, history)
        state, gamma, solver, u, r, res, G = trial, t_gamma, t_solver, t_u, t_r, t_res, t_G
        mis = misclassified_fraction(project(state.phi), truth) if truth is not None else float("nan")
        history.append(IterationRecord(state.iter, res, G, mis, tau, halving, 3 + halving))
        log.debug("iter %d: |r| = %.4e G = %.6e tau = %.3g", state.iter, res, G, tau)
        if callback:
            callback(state, history[-1])
    return state, history


def signed_distance_to_line(grid: Grid, y0: float = 0.5, slope: float = 0.0) -> ScalarField:
    """Cell field ``phi`` positive above the line ``y = y0 + slope (x - 0.5)``."""
    X, Y = grid.cell_coords()
    d = (Y - (y0 + slope * (X - 0.5))) / np.sqrt(1 + slope**2)
    return ScalarField(grid, d, "cell")
