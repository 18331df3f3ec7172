"""Forward models for the linearized unipolar problem.

The conductivity equation ``div(gamma grad u) = 0`` is discretized by a
vertex-centred finite-volume scheme: unknowns at the grid nodes, conductivity
constant on each grid cell.  The flux across the dual face between two
neighbouring nodes is the length-weighted arithmetic mean of the (at most two)
cells that face crosses, which makes the scheme exact for layered media whose
interfaces run along grid lines.  Insulating edges need no special treatment:
boundary nodes simply own half (or quarter) control volumes, which is the same
as the mirror-ghost reflection of the five-point stencil.

Sign convention for currents: the trace returned by :func:`dtn_apply` is the
current leaving the device through the measurement contact in the Ohmic
sense, ``-gamma du/dnu`` with ``nu`` the outward normal.  With a positive
voltage on the source contact it is positive.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .mesh import BoundarySpec, Grid, Label, ScalarField, node_index_array, boundary_nodes

log = logging.getLogger(__name__)

GAMMA_MIN = 1.0
GAMMA_MAX = 2.0
LINEAR_TOL = 1e-10
NEWTON_TOL = 1e-9


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed; ``residual`` holds the last residual norm."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# solve accounting

_counter: contextvars.ContextVar[Counter | None] = contextvars.ContextVar("solves", default=None)


def record_solve(kind: str) -> None:
    """Register one elliptic boundary-value solve of the given kind."""
    c = _counter.get()
    if c is not None:
        c[kind] += 1


@contextlib.contextmanager
def count_solves():
    """Context manager yielding a :class:`collections.Counter` of BVP solves by kind."""
    c = Counter()
    token = _counter.set(c)
    try:
        yield c
    finally:
        _counter.reset(token)


# ---------------------------------------------------------------------------
# assembly


def _as_cell_gamma(gamma: ScalarField) -> np.ndarray:
    if gamma.centering != "cell":
        raise ValueError("conductivity must be a cell-centred field")
    return gamma.values


def check_bounds(gamma: ScalarField, lo: float = GAMMA_MIN, hi: float = GAMMA_MAX) -> None:
    v = gamma.values
    if lo <= 0:
        raise ValueError("lower conductivity bound must be positive")
    if v.min() < lo - 1e-12 or v.max() > hi + 1e-12:
        raise ValueError(f"conductivity outside [{lo}, {hi}]: range [{v.min():.6g}, {v.max():.6g}]")


def edge_conductances(grid: Grid, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Conductances of the horizontal and vertical node-to-node links.

    Returns ``(cx, cy)`` with ``cx[j, i]`` linking nodes (i, j)-(i+1, j) and
    ``cy[j, i]`` linking (i, j)-(i, j+1).
    """
    hx, hy = grid.hx, grid.hy
    cx = np.zeros((grid.ny, grid.nx - 1))
    cx[:-1] += g
    cx[1:] += g
    cx *= 0.5 * hy / hx
    cy = np.zeros((grid.ny - 1, grid.nx))
    cy[:, :-1] += g
    cy[:, 1:] += g
    cy *= 0.5 * hx / hy
    return cx, cy


def stiffness(grid: Grid, g: np.ndarray) -> sp.csr_matrix:
    """Symmetric finite-volume stiffness matrix over all nodes for cell conductivity ``g``."""
    cx, cy = edge_conductances(grid, g)
    idx = np.arange(grid.nx * grid.ny).reshape(grid.node_shape)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    c = np.concatenate([cx.ravel(), cy.ravel()])
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([c, c, -c, -c])
    n = grid.nx * grid.ny
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    """``div(gamma grad u) = 0`` with ``u`` prescribed on both contacts.

    ``dirichlet`` is a nodal array of shape ``(ny, nx)``; only its entries on
    contact nodes are read.
    """

    gamma: ScalarField
    spec: BoundarySpec
    dirichlet: np.ndarray
    bounds: tuple[float, float] = (GAMMA_MIN, GAMMA_MAX)

    def __post_init__(self):
        _as_cell_gamma(self.gamma)
        check_bounds(self.gamma, *self.bounds)
        self.spec.validate(self.gamma.grid)
        d = np.asarray(self.dirichlet, dtype=float)
        if d.shape != self.gamma.grid.node_shape:
            raise ValueError(f"dirichlet data needs shape {self.gamma.grid.node_shape}")
        object.__setattr__(self, "dirichlet", d)

    @property
    def grid(self) -> Grid:
        return self.gamma.grid


@dataclass(eq=False)
class SparseSystem:
    """Reduced system ``A x = b`` over the free (interior and insulating) nodes.

    ``stiffness`` is the full node-by-node matrix; ``free`` and ``fixed``
    are flat node indices, ``fixed_values`` the Dirichlet values.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    stiffness: sp.csr_matrix
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    grid: Grid
    coupling: sp.csr_matrix | None = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def rows(self, k: int) -> list[tuple[int, float]]:
        start, stop = self.matrix.indptr[k], self.matrix.indptr[k + 1]
        return list(zip(self.matrix.indices[start:stop].tolist(), self.matrix.data[start:stop].tolist()))

    def is_diagonally_dominant(self) -> bool:
        """Weak row dominance, strict in at least one row of every connected component."""
        A = self.matrix.tocsr()
        diag = np.abs(A.diagonal())
        off = np.asarray(abs(A).sum(axis=1)).ravel() - diag
        if np.any(diag < off * (1 - 1e-12) - 1e-300):
            return False
        strict = diag > off * (1 + 1e-12)
        ncomp, comp = csgraph.connected_components(A, directed=False)
        return all(np.any(strict[comp == c]) for c in range(ncomp))

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Full nodal array from the free-node solution vector."""
        full = np.empty(self.grid.nx * self.grid.ny, dtype=np.result_type(x, self.fixed_values))
        full[self.free] = x
        full[self.fixed] = self.fixed_values
        return full.reshape(self.grid.node_shape)

    def with_rhs_from(self, values: np.ndarray) -> "SparseSystem":
        """Same matrix (and factorization) with new Dirichlet values on the fixed nodes."""
        values = np.asarray(values, dtype=float)
        if self.coupling is None:
            self.coupling = self.stiffness[self.free][:, self.fixed].tocsr()
        rhs = -(self.coupling @ values)
        return SparseSystem(self.matrix, rhs, self.stiffness, self.free, self.fixed, values, self.grid,
                            self.coupling, self._lu)


def assemble(p: EllipticProblem) -> SparseSystem:
    grid = p.grid
    K = stiffness(grid, p.gamma.values)
    labels = p.spec.label_array(grid).ravel()
    fixed = np.flatnonzero((labels == Label.SOURCE) | (labels == Label.MEASURE))
    free = np.flatnonzero((labels == Label.INTERIOR) | (labels == Label.INSULATING))
    values = p.dirichlet.ravel()[fixed]
    Kf = K[free]
    A = Kf[:, free].tocsc()
    coupling = Kf[:, fixed].tocsr()
    rhs = -(coupling @ values)
    return SparseSystem(A, rhs, K, free, fixed, values, grid, coupling)


def solve(s: SparseSystem, tol: float = LINEAR_TOL, method: str = "direct") -> np.ndarray:
    """Solve the reduced system.

    ``method`` is ``"direct"`` (sparse LU, factorization cached on ``s``),
    ``"cg"`` (Jacobi-preconditioned conjugate gradients to relative residual
    ``tol``) or ``"dense"`` (dense Gaussian elimination; the reference path).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = s.rhs
    if s.n == 0:
        return np.zeros(0)
    if method == "direct":
        if s._lu is None:
            s._lu = spla.splu(s.matrix.tocsc())
        x = s._lu.solve(b)
    elif method == "dense":
        x = np.linalg.solve(s.matrix.toarray(), b)
    elif method == "cg":
        if not np.any(b):
            return np.zeros_like(b)
        M = sp.diags(1.0 / s.matrix.diagonal())
        x, info = spla.cg(s.matrix, b, rtol=tol, atol=0.0, M=M, maxiter=20 * s.n)
        if info != 0:
            res = np.linalg.norm(s.matrix @ x - b) / np.linalg.norm(b)
            raise SolverError("conjugate gradients did not converge", res)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution", float("inf"))
    return x


# ---------------------------------------------------------------------------
# DtN map


class ConductivitySolver:
    """Factorized conductivity operator for one ``gamma``, shared by several solves.

    Every call of :meth:`potential` is one boundary-value solve and is
    recorded as such.
    """

    def __init__(self, gamma: ScalarField, spec: BoundarySpec, bounds=(GAMMA_MIN, GAMMA_MAX),
                 method: str = "direct"):
        grid = gamma.grid
        self.gamma = gamma
        self.spec = spec
        self.grid = grid
        self.method = method
        self.system = assemble(EllipticProblem(gamma, spec, np.zeros(grid.node_shape), bounds))
        self.source_nodes = boundary_nodes(grid, spec, Label.SOURCE)
        self.measure_nodes = boundary_nodes(grid, spec, Label.MEASURE)
        self._src = node_index_array(self.source_nodes)
        self._mes = node_index_array(self.measure_nodes)
        self.segments = spec.contact_lengths(grid)[self._mes]
        self._mes_flat = self._mes[0] * grid.nx + self._mes[1]

    def potential(self, dirichlet: np.ndarray, kind: str = "forward") -> np.ndarray:
        """Nodal solution for Dirichlet data given as a full nodal array."""
        d = np.asarray(dirichlet, dtype=float).ravel()
        s = self.system.with_rhs_from(d[self.system.fixed])
        x = solve(s, method=self.method)
        self.system._lu = s._lu
        record_solve(kind)
        return s.expand(x)

    def source_data(self, U_gamma0) -> np.ndarray:
        """Nodal Dirichlet array from values on the source nodes (zero on Gamma_1)."""
        d = np.zeros(self.grid.node_shape)
        d[self._src] = U_gamma0
        return d

    def measure_data(self, r) -> np.ndarray:
        d = np.zeros(self.grid.node_shape)
        d[self._mes] = r
        return d

    def reactions(self, u: np.ndarray) -> np.ndarray:
        """Net flux ``int gamma du/dnu`` over the contact piece of each Gamma_1 node."""
        return self.system.stiffness[self._mes_flat] @ u.ravel()

    def trace(self, u: np.ndarray) -> np.ndarray:
        """Current density ``-gamma du/dnu`` at the Gamma_1 nodes."""
        return -self.reactions(u) / self.segments

    def dtn(self, U_gamma0) -> np.ndarray:
        return self.trace(self.potential(self.source_data(U_gamma0)))

    def gradient_density(self, u: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Cell array ``-grad u . grad q`` built from the four edges of every cell.

        This is the exact derivative of ``-q^T K(gamma) u`` with respect to
        the cell conductivity, divided by the cell area.
        """
        hx, hy = self.grid.hx, self.grid.hy
        ux, uy = np.diff(u, axis=1) / hx, np.diff(u, axis=0) / hy
        qx, qy = np.diff(q, axis=1) / hx, np.diff(q, axis=0) / hy
        px = ux * qx
        py = uy * qy
        return -0.5 * (px[:-1] + px[1:] + py[:, :-1] + py[:, 1:])

    def linearized_trace(self, u: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Derivative of the trace in the direction of cell perturbation ``h``."""
        dK = stiffness(self.grid, h)
        f = dK @ u.ravel()
        s = self.system
        ds = SparseSystem(s.matrix, -f[s.free], s.stiffness, s.free, s.fixed,
                          np.zeros(s.fixed.size), s.grid, s.coupling, s._lu)
        du = ds.expand(solve(ds, method=self.method))
        s._lu = ds._lu
        record_solve("linearized")
        react = f[self._mes_flat] + s.stiffness[self._mes_flat] @ du.ravel()
        return -react / self.segments


def measure_norm(values: np.ndarray, segments: np.ndarray) -> float:
    """L2(Gamma_1) norm of a trace with contact-length quadrature weights."""
    return float(np.sqrt(np.sum(segments * np.asarray(values) ** 2)))


def dtn_apply(gamma: ScalarField, spec: BoundarySpec, U, bounds=(GAMMA_MIN, GAMMA_MAX),
              method: str = "direct") -> np.ndarray:
    """Current trace on Gamma_1 for the voltage ``U``.

    ``U`` is either a nodal ``(ny, nx)`` array, which must vanish on the
    measurement contact, or a vector of values on the source nodes in
    :func:`boundary_nodes` order.
    """
    solver = ConductivitySolver(gamma, spec, bounds, method)
    U = np.asarray(U, dtype=float)
    if U.shape == gamma.grid.node_shape:
        if np.any(U[solver._mes] != 0):
            raise ValueError("applied voltage must vanish on the measurement contact")
        data = np.where(spec.label_array(gamma.grid) == Label.SOURCE, U, 0.0)
    else:
        data = solver.source_data(U)
    return solver.trace(solver.potential(data))


# ---------------------------------------------------------------------------
# equilibrium Poisson problem and transforms


def laplacian_h(f: ScalarField, spec: BoundarySpec | None = None) -> ScalarField:
    """Five-point Laplacian of a nodal field.

    Centred where both neighbours exist; at an edge the missing neighbour is
    the mirror image on insulating nodes and a one-sided second difference is
    used on contact nodes.
    """
    if f.centering != "node":
        raise ValueError("expected a nodal field")
    spec = spec or BoundarySpec()
    grid = f.grid
    labels = spec.label_array(grid)
    dirichlet = (labels == Label.SOURCE) | (labels == Label.MEASURE)
    v = f.values
    out = np.zeros_like(v)
    for axis, h in ((1, grid.hx), (0, grid.hy)):
        w = np.moveaxis(v, axis, 0)
        d = np.moveaxis(dirichlet, axis, 0)
        lap = np.empty_like(w)
        lap[1:-1] = w[2:] - 2 * w[1:-1] + w[:-2]
        for k, k1, k2 in ((0, 1, 2), (-1, -2, -3)):
            lap[k] = np.where(d[k], w[k] - 2 * w[k1] + w[k2], 2 * (w[k1] - w[k]))
        out += np.moveaxis(lap, 0, axis) / h**2
    return ScalarField(grid, out)


def _equilibrium_residual(V, C, lam2, lap_op, free, mass):
    with np.errstate(over="ignore", invalid="ignore"):
        r = lam2 * (lap_op @ V)[free] / mass - np.exp(V[free]) + C[free]
    return r


def solve_equilibrium(C: ScalarField, V_bi, lam: float, tol: float = NEWTON_TOL,
                      spec: BoundarySpec | None = None, max_iter: int = 100) -> ScalarField:
    """Damped Newton solve of ``lam^2 Lap V = exp(V) - C`` with ``V = V_bi`` on the contacts.

    The step is halved until the residual 2-norm decreases, down to a floor
    of 2**-20.  Convergence is declared when the sup norm of the residual
    at the free nodes is below ``tol`` times the diagonal scale
    ``1 + lam^2 (2/hx^2 + 2/hy^2)`` of the Jacobian, i.e. when ``V`` is
    within about ``tol`` of a solution.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if C.centering != "node":
        raise ValueError("doping must be a nodal field")
    spec = spec or BoundarySpec()
    grid = C.grid
    labels = spec.label_array(grid).ravel()
    fixed = np.flatnonzero((labels == Label.SOURCE) | (labels == Label.MEASURE))
    free = np.flatnonzero((labels == Label.INTERIOR) | (labels == Label.INSULATING))
    vb = np.broadcast_to(np.asarray(V_bi, dtype=float), grid.node_shape).ravel()
    K = stiffness(grid, np.ones(grid.cell_shape))
    lap_op = -K
    mass = grid.node_weights().ravel()[free]
    lam2 = lam * lam
    c = C.flat

    # initial guess: harmonic extension of the boundary data
    V = np.zeros(grid.nx * grid.ny)
    V[fixed] = vb[fixed]
    Kff = K[free][:, free].tocsc()
    V[free] = spla.spsolve(Kff, -(K[free][:, fixed] @ V[fixed]))
    r = _equilibrium_residual(V, c, lam2, lap_op, free, mass)
    history = [float(np.linalg.norm(r))]
    scale = 1.0 + lam2 * (2 / grid.hx**2 + 2 / grid.hy**2)
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol * scale:
            break
        # dr/dV = -(lam2 K + m e^V) / m
        J = lam2 * Kff + sp.diags(mass * np.exp(V[free]))
        step = spla.spsolve(J.tocsc(), mass * r)
        t = 1.0
        norm0 = np.linalg.norm(r)
        while True:
            Vt = V.copy()
            Vt[free] += t * step
            rt = _equilibrium_residual(Vt, c, lam2, lap_op, free, mass)
            nt = np.linalg.norm(rt)
            if np.isfinite(nt) and nt < norm0:
                break
            t *= 0.5
            if t < 2.0**-20:
                raise SolverError("Newton iteration stagnated", float(np.max(np.abs(r))))
        V, r = Vt, rt
        history.append(float(nt))
        log.debug("newton %d: |r| = %.3e (step %.3g)", it, nt, t)
    else:
        raise SolverError("Newton iteration hit the iteration cap", float(np.max(np.abs(r))))
    solve_equilibrium.last_history = history
    return ScalarField(grid, V.reshape(grid.node_shape))


solve_equilibrium.last_history = []


def gamma_from_doping(C: ScalarField, V_bi, lam: float, tol: float = NEWTON_TOL,
                      spec: BoundarySpec | None = None) -> ScalarField:
    """Nodal ``gamma = exp(V0)`` for the equilibrium potential of doping ``C``."""
    V0 = solve_equilibrium(C, V_bi, lam, tol, spec)
    return ScalarField(C.grid, np.exp(V0.values))


def doping_from_gamma(gamma: ScalarField, lam: float, spec: BoundarySpec | None = None) -> ScalarField:
    """``C = gamma - lam^2 Lap_h(ln gamma)`` for a nodal conductivity."""
    if np.any(gamma.values <= 0):
        raise ValueError("conductivity must be positive")
    lg = ScalarField(gamma.grid, np.log(gamma.values))
    return ScalarField(gamma.grid, gamma.values - lam**2 * laplacian_h(lg, spec).values)


def schrodinger_from_gamma(gamma: ScalarField, spec: BoundarySpec | None = None) -> ScalarField:
    """Potential ``Lap_h(sqrt(gamma)) / sqrt(gamma)`` of the Liouville transform."""
    if np.any(gamma.values <= 0):
        raise ValueError("conductivity must be positive")
    s = np.sqrt(gamma.values)
    lap = laplacian_h(ScalarField(gamma.grid, s), spec).values
    return ScalarField(gamma.grid, lap / s)
