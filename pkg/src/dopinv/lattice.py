"""Discrete Schrödinger lattice: forward solver and diagonal-sweep identification.

Interior sites are ``(i, j)`` with ``1 <= i <= N1`` and ``1 <= j <= N2``.
Boundary sites have exactly one index in ``{0, N1 + 1}`` or ``{0, N2 + 1}``
(corners excluded).  The unknown ``u`` satisfies at every interior site

    u_ij - (w_ij / 4) (u_{i+1,j} + u_{i-1,j} + u_{i,j+1} + u_{i,j-1}) = 0,

with a unit impulse at one detector site of Gamma_0, zero on all other
Dirichlet sites and ``u_b = u_a`` on a Neumann site ``b`` next to the
interior site ``a``.  ``u_ij`` is the probability that a random walk
started at ``(i, j)``, surviving each visit with probability ``w_ij``,
is absorbed at the detector.

Arrays indexed by interior sites have shape ``(N1, N2)`` with
``w[i - 1, j - 1] = w_ij``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Site = tuple[int, int]

DET_TOL = 1e-12


class LatticeError(ValueError):
    """Invalid lattice, layout or data."""


class GenericityError(RuntimeError):
    """The sweep determinant vanished (numerically) at diagonal ``p``."""

    def __init__(self, p: int, det: float, scale: float):
        super().__init__(f"sweep determinant D_{p} = {det:.3e} is negligible (scale {scale:.3e})")
        self.p = p
        self.det = det
        self.scale = scale


class SiteKind(enum.Enum):
    DETECTOR = "detector"  # Gamma_0: Dirichlet, carries the impulse
    MEASURE = "measure"  # Gamma_1: homogeneous Dirichlet, currents read next to it
    NEUMANN = "neumann"


# ---------------------------------------------------------------------------
# weights and potential


def _check_weights(w: np.ndarray, strict: bool = True) -> None:
    bad = ~((w > 0) & (w < 1)) if strict else ~((w >= 0) & (w <= 1))
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        interval = "(0, 1)" if strict else "[0, 1]"
        raise LatticeError(f"w at site ({i + 1}, {j + 1}) = {w[i, j]!r} is outside {interval}")


def w_from_potential(V, eps_mesh: float, strict: bool = True) -> np.ndarray:
    """``w = 4 / (4 + eps^2 V)``; rejects sites where ``w`` leaves ``(0, 1)``."""
    if eps_mesh <= 0:
        raise LatticeError("mesh size must be positive")
    V = np.asarray(V, dtype=float)
    den = 4 + eps_mesh**2 * V
    if np.any(den <= 0):
        i, j = np.argwhere(den <= 0)[0]
        raise LatticeError(f"4 + eps^2 V <= 0 at site ({i + 1}, {j + 1})")
    w = 4 / den
    _check_weights(w, strict)
    return w


def potential_from_w(w, eps_mesh: float) -> np.ndarray:
    """Inverse map ``V = (4 / w - 4) / eps^2``."""
    if eps_mesh <= 0:
        raise LatticeError("mesh size must be positive")
    return (4 / np.asarray(w, dtype=float) - 4) / eps_mesh**2


def effective_weight(w, neumann_neighbours: int = 1):
    """Survival weight after eliminating ``k`` Neumann neighbours.

    The row ``u - (w/4)(k u + S) = 0`` becomes ``u - (w_eff / (4-k)) S = 0``
    with ``w_eff = (4-k) w / (4 - k w)``; for ``k = 1`` this is ``3w/(4-w)``.
    """
    k = neumann_neighbours
    if not 0 <= k <= 3:
        raise LatticeError("an interior site has at most three Neumann neighbours")
    return (4 - k) * np.asarray(w) / (4 - k * np.asarray(w))


# ---------------------------------------------------------------------------
# geometry


def boundary_sites(N1: int, N2: int) -> list[Site]:
    """All boundary sites in counter-clockwise order starting at ``(1, 0)``."""
    return ([(i, 0) for i in range(1, N1 + 1)] + [(N1 + 1, j) for j in range(1, N2 + 1)]
            + [(i, N2 + 1) for i in range(N1, 0, -1)] + [(0, j) for j in range(N2, 0, -1)])


def adjacent_interior(site: Site, N1: int, N2: int) -> Site:
    i, j = site
    if i == 0:
        return (1, j)
    if i == N1 + 1:
        return (N1, j)
    if j == 0:
        return (i, 1)
    if j == N2 + 1:
        return (i, N2)
    raise LatticeError(f"{site} is not a boundary site")


@dataclass(frozen=True, eq=False)
class LatticeLayout:
    """Assignment of every boundary site to Gamma_0, Gamma_1 or the Neumann part."""

    N1: int
    N2: int
    kinds: dict = field(repr=False)

    def __post_init__(self):
        if self.N1 < 1 or self.N2 < 1:
            raise LatticeError("lattice sides must be positive")
        expected = set(boundary_sites(self.N1, self.N2))
        got = set(self.kinds)
        if got != expected:
            extra = sorted(got - expected)
            missing = sorted(expected - got)
            raise LatticeError(f"layout does not partition the boundary: extra {extra}, missing {missing}")
        object.__setattr__(self, "kinds", {s: SiteKind(k) for s, k in self.kinds.items()})

    @classmethod
    def theorem(cls, N: int, p_prime: int, N2: int | None = None) -> "LatticeLayout":
        """Layout used for identification.

        Gamma_1 holds the sites ``(0, j)`` and ``(i, 0)`` with index at most
        ``p' + 1``; Gamma_0 holds ``(N1 + 1, j)`` for ``j = N2 - p' + 1 .. N2``;
        every other boundary site is Neumann.
        """
        N1, N2 = N, N if N2 is None else N2
        kinds = {s: SiteKind.NEUMANN for s in boundary_sites(N1, N2)}
        for k in range(1, p_prime + 2):
            if k <= N2:
                kinds[(0, k)] = SiteKind.MEASURE
            if k <= N1:
                kinds[(k, 0)] = SiteKind.MEASURE
        for j in range(N2 - p_prime + 1, N2 + 1):
            if kinds.get((N1 + 1, j)) is None or j < 1:
                raise LatticeError("detector segment does not fit on the lattice")
            kinds[(N1 + 1, j)] = SiteKind.DETECTOR
        return cls(N1, N2, kinds)

    @classmethod
    def all_dirichlet(cls, N1: int, N2: int, detectors=()) -> "LatticeLayout":
        """Gamma_1 everywhere except the listed Gamma_0 sites."""
        kinds = {s: SiteKind.MEASURE for s in boundary_sites(N1, N2)}
        for d in detectors:
            kinds[tuple(d)] = SiteKind.DETECTOR
        return cls(N1, N2, kinds)

    def sites(self, kind: SiteKind | str) -> list[Site]:
        kind = SiteKind(kind)
        return [s for s in boundary_sites(self.N1, self.N2) if self.kinds[s] == kind]

    @property
    def detectors(self) -> list[Site]:
        return self.sites(SiteKind.DETECTOR)

    @property
    def gamma1(self) -> list[Site]:
        return self.sites(SiteKind.MEASURE)


@dataclass(frozen=True, eq=False)
class Lattice:
    w: np.ndarray
    layout: LatticeLayout
    eps_mesh: float = 1.0
    strict: bool = True

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.shape != (self.layout.N1, self.layout.N2):
            raise LatticeError(f"weights of shape {w.shape} do not match the layout")
        if self.eps_mesh <= 0:
            raise LatticeError("mesh size must be positive")
        _check_weights(w, self.strict)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def N1(self) -> int:
        return self.layout.N1

    @property
    def N2(self) -> int:
        return self.layout.N2

    @property
    def V(self) -> np.ndarray:
        return potential_from_w(self.w, self.eps_mesh)


@dataclass(frozen=True, eq=False)
class LatticeSolution:
    detector: Site
    z: np.ndarray  # (N1 + 2, N2 + 2) including boundary values; corners are zero

    def __getitem__(self, site: Site) -> float:
        return self.z[site]

    @property
    def interior(self) -> np.ndarray:
        return self.z[1:-1, 1:-1]


# ---------------------------------------------------------------------------
# forward solver


def _neighbours(i: int, j: int) -> list[Site]:
    return [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]


def _interior_index(N2: int, i: int, j: int) -> int:
    return (i - 1) * N2 + (j - 1)


def assemble_reduced(l: Lattice, d: Site):
    """Reduced system with Neumann sites eliminated.

    Returns ``(A, b)`` of size ``N1 N2``.  A site with ``k`` Neumann
    neighbours gets the row ``u - w/(4 - k w) * (sum of the others) = b``.
    """
    N1, N2 = l.N1, l.N2
    kinds = l.layout.kinds
    rows, cols, vals = [], [], []
    b = np.zeros(N1 * N2)
    for i in range(1, N1 + 1):
        for j in range(1, N2 + 1):
            r = _interior_index(N2, i, j)
            nbrs = _neighbours(i, j)
            k = sum(1 for s in nbrs if kinds.get(s) == SiteKind.NEUMANN)
            wij = l.w[i - 1, j - 1]
            c = wij / (4 - k * wij)
            rows.append(r)
            cols.append(r)
            vals.append(1.0)
            for s in nbrs:
                kind = kinds.get(s)
                if kind is None:
                    rows.append(r)
                    cols.append(_interior_index(N2, *s))
                    vals.append(-c)
                elif s == d:
                    b[r] += c
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N1 * N2, N1 * N2))
    return A, b


def assemble_explicit(l: Lattice, d: Site):
    """Dense system keeping the Neumann boundary values as unknowns.

    Unknowns are the interior sites followed by the Neumann sites; each
    Neumann site contributes the copy equation ``u_b - u_a = 0``.
    """
    N1, N2 = l.N1, l.N2
    neu = l.layout.sites(SiteKind.NEUMANN)
    index = {(i, j): _interior_index(N2, i, j) for i in range(1, N1 + 1) for j in range(1, N2 + 1)}
    for k, s in enumerate(neu):
        index[s] = N1 * N2 + k
    n = len(index)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for i in range(1, N1 + 1):
        for j in range(1, N2 + 1):
            r = index[(i, j)]
            A[r, r] = 1.0
            q = l.w[i - 1, j - 1] / 4
            for s in _neighbours(i, j):
                if s in index:
                    A[r, index[s]] -= q
                elif s == d:
                    b[r] += q
    for s in neu:
        r = index[s]
        A[r, r] = 1.0
        A[r, index[adjacent_interior(s, N1, N2)]] = -1.0
    return A, b, index


def is_strictly_diagonally_dominant(A) -> bool:
    A = sp.csr_matrix(A)
    diag = np.abs(A.diagonal())
    off = np.asarray(abs(A).sum(axis=1)).ravel() - diag
    return bool(np.all(diag > off))


def _full_array(l: Lattice, d: Site, interior: np.ndarray) -> np.ndarray:
    N1, N2 = l.N1, l.N2
    z = np.zeros((N1 + 2, N2 + 2), dtype=interior.dtype)
    z[1:-1, 1:-1] = interior.reshape(N1, N2)
    for s, kind in l.layout.kinds.items():
        if kind == SiteKind.NEUMANN:
            z[s] = z[adjacent_interior(s, N1, N2)]
        elif s == d:
            z[s] = 1.0
    return z


def lattice_solve(l: Lattice, d: Site, method: str = "sparse") -> LatticeSolution:
    """Solve for the impulse at detector ``d``.

    ``method="sparse"`` factorizes the reduced system in natural order
    without pivoting.  For this M-matrix both triangular solves only add
    non-negative terms, so even very small ``z`` values come out with full
    relative accuracy.  ``"dense"`` eliminates the explicit system and
    serves as an oracle.
    """
    d = tuple(d)
    if l.layout.kinds.get(d) != SiteKind.DETECTOR:
        raise LatticeError(f"{d} is not a Gamma_0 site")
    if method == "dense":
        A, b, index = assemble_explicit(l, d)
        x = np.linalg.solve(A, b)[: l.N1 * l.N2]
    elif method == "sparse":
        A, b = assemble_reduced(l, d)
        if not is_strictly_diagonally_dominant(A):
            raise LatticeError("lattice matrix is not strictly diagonally dominant")
        lu = spla.splu(A.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        x = lu.solve(b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return LatticeSolution(d, _full_array(l, d, x))


def measurements(sol: LatticeSolution, layout: LatticeLayout) -> np.ndarray:
    """Values on the interior layer next to Gamma_1, one per Gamma_1 site."""
    return np.array([sol.z[adjacent_interior(s, layout.N1, layout.N2)] for s in layout.gamma1])


def measurement_sites(layout: LatticeLayout) -> list[Site]:
    return [adjacent_interior(s, layout.N1, layout.N2) for s in layout.gamma1]


# ---------------------------------------------------------------------------
# path combinatorics


def min_length(site: Site, target: Site) -> int:
    return abs(target[0] - site[0]) + abs(target[1] - site[1])


def path_count(site: Site, target: Site) -> int:
    """Number of shortest lattice paths between two sites."""
    di = abs(target[0] - site[0])
    return math.comb(min_length(site, target), di)


def path_sum_partial(l: Lattice, d: Site, max_len: int) -> np.ndarray:
    """``max_len`` fixed-point sweeps of the lattice equations from zero.

    The result is the sum over walks of at most ``max_len`` steps that end
    at the detector, each weighted by its product of transition
    probabilities ``w/4``.  Returns the interior array.
    """
    if max_len < 0:
        raise ValueError("max_len must be non-negative")
    N1, N2 = l.N1, l.N2
    d = tuple(d)
    kinds = l.layout.kinds
    z = np.zeros((N1 + 2, N2 + 2))
    q = l.w / 4
    for _ in range(max_len):
        for s, kind in kinds.items():
            if kind == SiteKind.NEUMANN:
                z[s] = z[adjacent_interior(s, N1, N2)]
            else:
                z[s] = 1.0 if s == d else 0.0
        nxt = q * (z[2:, 1:-1] + z[:-2, 1:-1] + z[1:-1, 2:] + z[1:-1, :-2])
        z[1:-1, 1:-1] = nxt
    return z[1:-1, 1:-1].copy()


# ---------------------------------------------------------------------------
# identification


def diagonal_sites(p: int) -> list[Site]:
    """Sites ``(1, p), (2, p-1), ..., (p, 1)`` of diagonal ``i + j = p + 1``."""
    return [(q, p + 1 - q) for q in range(1, p + 1)]


def sweep_determinant(z_by_detector, p: int, detectors) -> float:
    """``det Z`` with ``Z[q, k] = z^{d_k}`` at the ``q``-th site of diagonal ``p``.

    ``z_by_detector`` maps a detector to anything indexable by a site
    (a full solution array or a dict).
    """
    Z = _sweep_matrix(z_by_detector, p, detectors)
    return float(np.linalg.det(Z)) if np.isrealobj(Z) else complex(np.linalg.det(Z))


def _sweep_matrix(z_by_detector, p: int, detectors) -> np.ndarray:
    detectors = [tuple(d) for d in detectors]
    if len(detectors) != p:
        raise ValueError(f"diagonal {p} needs exactly {p} detectors")
    cols = [[z_by_detector[d][s] for s in diagonal_sites(p)] for d in detectors]
    return np.array(cols).T


def required_data_sites(layout: LatticeLayout, p_prime: int) -> list[Site]:
    """Sites with an index in ``{0, 1}`` that the sweep up to ``p'`` reads."""
    sites = []
    for k in range(0, p_prime + 2):
        for s in ((0, k), (k, 0), (1, k), (k, 1)):
            if s != (0, 0) and s not in sites:
                sites.append(s)
    return sorted(sites)


def check_support(layout: LatticeLayout, p_prime: int, N: int | None = None) -> None:
    """Raise unless ``2 p' <= N + 1`` and Gamma_0 contains ``(N+1, N), ..., (N+1, N-p'+1)``."""
    N1, N2 = layout.N1, layout.N2
    N = min(N1, N2) if N is None else N
    if p_prime < 1:
        raise LatticeError("p' must be at least 1")
    if 2 * p_prime > N + 1:
        raise LatticeError(f"2 p' = {2 * p_prime} exceeds N + 1 = {N + 1}")
    need = [(N1 + 1, j) for j in range(N2 - p_prime + 1, N2 + 1)]
    missing = [s for s in need if layout.kinds.get(s) != SiteKind.DETECTOR]
    if missing:
        raise LatticeError(f"Gamma_0 must contain the sites {missing}")


def collect_data(l: Lattice, detectors, p_prime: int, solutions=None) -> dict:
    """Simulated data for the sweep: ``{detector: {site: z}}`` on the required sites."""
    out = {}
    for d in detectors:
        d = tuple(d)
        sol = solutions[d] if solutions is not None else lattice_solve(l, d)
        out[d] = {s: float(sol.z[s]) for s in required_data_sites(l.layout, p_prime)}
    return out


@dataclass
class DiagonalReport:
    p: int
    det: float
    scale: float
    condition: float = float("nan")
    max_abs_error: float = float("nan")


@dataclass
class Recovery:
    w: np.ndarray  # (N1, N2), NaN outside the covered diagonals
    V_hat: np.ndarray
    z: dict  # detector -> {site: value}, data plus recovered interior values
    report: list

    def covered(self) -> np.ndarray:
        return ~np.isnan(self.w)


def _boundary_value(layout: LatticeLayout, d: Site, site: Site, zd: dict):
    kind = layout.kinds[site]
    if kind == SiteKind.NEUMANN:
        return zd[adjacent_interior(site, layout.N1, layout.N2)]
    return 1.0 if site == d else 0.0


def _lower_neighbours(site: Site, zd: dict):
    i, j = site
    return zd[(i - 1, j)] + zd[(i, j - 1)]


def _sweep(data: dict, p_prime: int, layout: LatticeLayout, detectors, tol_det: float, check: bool):
    zs = {d: dict(v) for d, v in data.items()}
    V_hat = {}
    dets = []
    for d in detectors:
        zd = zs[d]
        for s in required_data_sites(layout, p_prime):
            if s[0] == 0 or s[1] == 0:
                zd[s] = _boundary_value(layout, d, s, zd)
    for p in range(1, p_prime + 1):
        use = detectors[:p]
        diag = diagonal_sites(p)
        Z = _sweep_matrix(zs, p, use)
        det = np.linalg.det(Z)
        scale = float(np.prod(np.linalg.norm(Z.real, axis=0)))
        dets.append((p, float(np.real(det)), scale))
        if check and not abs(np.real(det)) > tol_det * scale:
            raise GenericityError(p, float(np.real(det)), scale)
        tops = [(q, p + 2 - q) for q in range(1, p + 2)]
        M = np.empty((p, p), dtype=Z.dtype)
        rhs = np.empty(p, dtype=Z.dtype)
        for k, d in enumerate(use):
            zd = zs[d]
            signs = [(-1) ** q for q in range(p)]
            M[k] = [signs[q] * zd[diag[q]] for q in range(p)]
            rhs[k] = (zd[tops[0]] + signs[p - 1] * zd[tops[p]]
                      + sum(signs[q] * _lower_neighbours(diag[q], zd) for q in range(p)))
        vhat = np.linalg.solve(M, rhs)
        for q, s in enumerate(diag):
            V_hat[s] = vhat[q]
        # next diagonal for every detector
        for d in detectors:
            zd = zs[d]
            for q in range(p - 1):
                s = diag[q]
                zd[tops[q + 1]] = vhat[q] * zd[s] - zd[tops[q]] - _lower_neighbours(s, zd)
    return V_hat, zs, dets


def recover_diagonals(data: dict, p_prime: int, layout: LatticeLayout, detectors=None,
                      eps_mesh: float = 1.0, tol_det: float = DET_TOL, strict: bool = True,
                      conditioning: bool = True) -> Recovery:
    """Recover ``w`` on the diagonals ``2 <= i + j <= p' + 1`` from boundary data.

    ``data`` maps each detector to its values ``z^d`` at the sites returned
    by :func:`required_data_sites` (first interior layer and boundary;
    boundary values may be omitted, they follow from the layout).
    Diagonal ``p`` uses the first ``p`` detectors.  A singular sweep
    matrix (``|det| <= tol_det * product of column norms``) raises
    :class:`GenericityError`.

    With ``conditioning`` the derivative of the recovered weights with
    respect to the data is computed by complex-step differentiation; the
    report's ``condition`` for diagonal ``p`` is the infinity norm of the
    rows belonging to that diagonal.
    """
    N1, N2 = layout.N1, layout.N2
    if detectors is None:
        detectors = layout.detectors[:p_prime]
    detectors = [tuple(d) for d in detectors]
    if strict:
        check_support(layout, p_prime)
    if len(detectors) < p_prime:
        raise LatticeError(f"{p_prime} diagonals need {p_prime} detectors, got {len(detectors)}")
    if len(set(detectors)) != len(detectors):
        raise LatticeError("detectors must be distinct")
    for d in detectors:
        if layout.kinds.get(d) != SiteKind.DETECTOR:
            raise LatticeError(f"{d} is not a Gamma_0 site")
    inputs = [s for s in required_data_sites(layout, p_prime) if s[0] != 0 and s[1] != 0]
    missing = [(d, s) for d in detectors for s in inputs if s not in data.get(d, {})]
    if missing:
        raise LatticeError(f"missing data values (detector, site): {missing}")
    clean = {d: {s: float(np.real(data[d][s])) for s in inputs} for d in detectors}
    V_hat, zs, dets = _sweep(clean, p_prime, layout, detectors, tol_det, check=True)

    w = np.full((N1, N2), np.nan)
    Vh = np.full((N1, N2), np.nan)
    for (i, j), v in V_hat.items():
        Vh[i - 1, j - 1] = v
        w[i - 1, j - 1] = 4 / v
    report = [DiagonalReport(p, det, scale) for p, det, scale in dets]

    if conditioning:
        keys = [(d, s) for d in detectors for s in inputs]
        h = 1e-30
        J = {}
        for k, (d, s) in enumerate(keys):
            pert = {dd: {ss: complex(v) for ss, v in vals.items()} for dd, vals in clean.items()}
            pert[d][s] += 1j * h
            Vp, _, _ = _sweep(pert, p_prime, layout, detectors, tol_det, check=False)
            for site, v in Vp.items():
                # dw/dz = -4/V^2 dV/dz
                J.setdefault(site, np.zeros(len(keys)))[k] = -4 * (v.imag / h) / V_hat[site].real ** 2
        for rep in report:
            rows = [J[s] for s in diagonal_sites(rep.p)]
            rep.condition = float(max(np.sum(np.abs(r)) for r in rows))
    z_out = {d: {s: float(np.real(v)) for s, v in zs[d].items()} for d in detectors}
    return Recovery(w, Vh, z_out, report)


def recovery_errors(rec: Recovery, w_true: np.ndarray) -> list[DiagonalReport]:
    """Fill ``max_abs_error`` of each diagonal against the true weights."""
    for rep in rec.report:
        errs = [abs(rec.w[i - 1, j - 1] - w_true[i - 1, j - 1]) for i, j in diagonal_sites(rep.p)]
        rep.max_abs_error = float(max(errs))
    return rec.report


# ---------------------------------------------------------------------------
# files


def write_lattice(path, l: Lattice) -> None:
    """``lattice <N> <eps>`` then ``N`` rows; row ``i`` lists ``w_i1 .. w_iN``."""
    if l.N1 != l.N2:
        raise LatticeError("the lattice file format stores square lattices")
    with open(path, "w") as fh:
        fh.write(f"lattice {l.N1} {l.eps_mesh!r}\n")
        for row in l.w:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_lattice_weights(path) -> tuple[np.ndarray, float]:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "lattice":
            raise LatticeError(f"{path}: expected 'lattice <N> <eps>' header")
        N, eps = int(header[1]), float(header[2])
        rows = [line.split() for line in fh if line.strip()]
    w = np.array(rows, dtype=float)
    if w.shape != (N, N):
        raise LatticeError(f"{path}: expected {N} rows of {N} values, got shape {w.shape}")
    return w, eps


def write_measurements(path, solutions, layout: LatticeLayout) -> None:
    """CSV ``detector,site_i,site_j,value`` over the Gamma_1 layer.

    ``detector`` is written as ``i:j``.
    """
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["detector", "site_i", "site_j", "value"])
        for sol in solutions:
            for s in measurement_sites(layout):
                out.writerow([f"{sol.detector[0]}:{sol.detector[1]}", s[0], s[1], repr(float(sol.z[s]))])


def write_recovery_report(path, report) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["p", "det_D_p", "max_abs_error"])
        for r in report:
            out.writerow([r.p, repr(r.det), repr(r.max_abs_error)])
