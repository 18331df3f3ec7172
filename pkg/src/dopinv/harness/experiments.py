"""Data synthesis and experiment orchestration."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kaczmarz as lk
from .. import lattice as lat
from .. import levelset as ls
from ..elliptic import ConductivitySolver, count_solves
from ..mesh import BoundarySpec, Grid, ScalarField, write_field
from ..metrics import metrics, misclassified_fraction
from . import export
from .config import ExperimentConfig, dumps
from .phantoms import from_config

log = logging.getLogger(__name__)


def make_rng(seed: int | None) -> np.random.Generator:
    """Noise generator: numpy's PCG64 (128-bit permuted congruential) seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def add_noise(traces, level: float, rng: np.random.Generator | None, segments: np.ndarray):
    """``Y + level * max|Y| * xi`` with ``xi`` uniform on ``[-1, 1]``, source by source.

    Returns the noisy traces and the bound ``delta`` on the stacked noise
    norm, ``level * max|Y| * sqrt(|Gamma_1| * number of traces)``.
    """
    traces = [np.asarray(t, dtype=float) for t in traces]
    if level == 0:
        return [t.copy() for t in traces], 0.0
    ymax = max(float(np.max(np.abs(t))) for t in traces)
    noisy = [t + level * ymax * rng.uniform(-1.0, 1.0, t.size) for t in traces]
    delta = level * ymax * float(np.sqrt(segments.sum() * len(traces)))
    return noisy, delta


@dataclass
class Synthesis:
    config: ExperimentConfig
    grid: Grid
    spec: BoundarySpec
    truth: ScalarField
    sources: list
    clean: list
    traces: list
    delta: float
    measure_nodes: list
    segments: np.ndarray
    basis: lk.VoltageBasis | None = None

    def datum(self) -> ls.InverseDatum:
        return ls.InverseDatum(self.spec, self.sources[0], self.traces[0], self.delta)

    def dataset(self) -> lk.DtNDataset:
        return lk.DtNDataset(self.basis, tuple(self.traces), self.delta)


def synthesize_dataset(cfg: ExperimentConfig, truth: ScalarField | None = None) -> Synthesis:
    """Phantom, forward solves for every source, and seeded noise."""
    grid = Grid(cfg.nx, cfg.ny)
    spec = cfg.boundary()
    spec.validate(grid)
    truth = truth if truth is not None else from_config(cfg).build(grid)
    solver = ConductivitySolver(truth, spec)
    basis = None
    if cfg.method == "lk":
        basis = lk.VoltageBasis(cfg.n_sources, cfg.delta_x, spec)
        sources = [basis.values(grid, j) for j in range(1, basis.N + 1)]
    else:
        sources = [np.full(len(solver.source_nodes), cfg.voltage)]
    clean = [solver.dtn(U) for U in sources]
    rng = make_rng(cfg.seed) if cfg.noise > 0 else None
    traces, delta = add_noise(clean, cfg.noise, rng, solver.segments)
    return Synthesis(cfg, grid, spec, truth, sources, clean, traces, delta, solver.measure_nodes,
                     solver.segments, basis)


def write_dataset(syn: Synthesis, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    export.write_traces(out / "traces.csv", syn.measure_nodes, syn.traces,
                        syn.clean if syn.config.noise > 0 else None)
    write_field(out / "truth.field", syn.truth)
    export.write_pgm(out / "truth.pgm", syn.truth)
    (out / "config.txt").write_text(dumps(syn.config))
    export.write_json(out / "dataset.json", {"delta": syn.delta, "sources": len(syn.sources),
                                             "measure_nodes": len(syn.measure_nodes)})


# ---------------------------------------------------------------------------
# runs


class RunFailure(RuntimeError):
    """A method failed; ``summary`` holds what was computed before the failure."""

    def __init__(self, cause: Exception, summary: dict):
        super().__init__(str(cause))
        self.cause = cause
        self.summary = summary


def _prepare(cfg: ExperimentConfig, out: Path | None):
    out = Path(cfg.output_dir) if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dumps(cfg))
    return out


def _metrics_dict(rec: ScalarField, truth: ScalarField) -> dict:
    m = metrics(rec, truth)
    return {"misclassified_fraction": m.misclassified_fraction, "l2_error": m.l2_error,
            "jaccard_distance": m.jaccard_distance}


def initial_level_set(cfg: ExperimentConfig, grid: Grid, spec: BoundarySpec, truth: ScalarField):
    phi0 = ls.signed_distance_to_line(grid, cfg.init_y0, cfg.init_slope)
    eps = cfg.eps if cfg.eps is not None else 2 * grid.hx
    mask = None
    if cfg.pin_measure_layer:
        mask = ls.measure_layer_mask(grid, spec)
        known = np.where(truth.values > 1.5, 1.0, -1.0) * np.maximum(np.abs(phi0.values), eps)
        phi0 = phi0.with_values(np.where(mask, known, phi0.values))
    return ls.LevelSetState(phi0, phi0, eps, cfg.beta, cfg.alpha, cfg.tau, 0, mask)


def run_levelset(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = _prepare(cfg, out)
    syn = synthesize_dataset(cfg)
    write_dataset(syn, out / "data")
    state = initial_level_set(cfg, syn.grid, syn.spec, syn.truth)
    snaps = out / "snapshots"
    if cfg.snapshot_every:
        snaps.mkdir(exist_ok=True)

    def snapshot(st, rec):
        if cfg.snapshot_every and rec.iter % cfg.snapshot_every == 0:
            write_field(snaps / f"phi_{rec.iter:05d}.field", st.phi)

    t0 = time.perf_counter()
    failure = None
    with count_solves() as solves:
        try:
            final, history = ls.evolve(state, syn.datum(), cfg.max_iter, cfg.stop_tol, syn.truth,
                                       callback=snapshot)
        except ls.StagnationError as exc:
            failure, final, history = exc, None, exc.history
    wall = time.perf_counter() - t0
    rows = [(r.iter, r.residual_l2, r.G_alpha, r.misclassified_fraction) for r in history]
    export.write_history(out / "history.csv", rows)
    iterations = history[-1].iter - history[0].iter
    G = [r.G_alpha for r in history]
    threshold = max(cfg.stop_tol, 1.1 * syn.delta if syn.delta > 0 else 0.0)
    summary = {
        "method": "levelset",
        "iterations": iterations,
        "solves": dict(sorted(solves.items())),
        "iteration_solves": sum(solves[k] for k in ("forward", "adjoint", "velocity")),
        "wall_time_s": wall,
        "residual_l2": history[-1].residual_l2,
        "G_alpha": history[-1].G_alpha,
        "delta": syn.delta,
        "monotone_G": bool(all(b <= a for a, b in zip(G, G[1:]))),
        "stop_reason": ("stagnation" if failure else
                        "discrepancy" if history[-1].residual_l2 <= threshold else "max_iter"),
    }
    if failure is None:
        rec = ls.project(final.phi)
        write_field(out / "phi.field", final.phi)
        write_field(out / "reconstruction.field", rec)
        export.write_pgm(out / "reconstruction.pgm", rec)
        summary["metrics"] = _metrics_dict(rec, syn.truth)
    export.write_json(out / "summary.json", summary)
    if failure is not None:
        raise RunFailure(failure, summary)
    return summary


def run_lk(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    out = _prepare(cfg, out)
    syn = synthesize_dataset(cfg)
    write_dataset(syn, out / "data")
    grid = syn.grid
    frozen = lk.frozen_strip_mask(grid, syn.spec, cfg.frozen_width) if cfg.frozen_width else None
    g0 = np.full(grid.cell_shape, cfg.gamma_init)
    if frozen is not None:
        g0 = np.where(frozen, syn.truth.values, g0)
    gamma0 = ScalarField(grid, g0, "cell")
    snaps = out / "snapshots"
    if cfg.snapshot_every:
        snaps.mkdir(exist_ok=True)
    rows = []
    step = [0]

    def on_event(gamma, record, info):
        if info is not None:
            cycle, j, rj = info
            step[0] += 1
            rows.append((step[0], rj, rj**2, misclassified_fraction(gamma, syn.truth), cycle, j))
        elif record is not None and cfg.snapshot_every and record.cycle % cfg.snapshot_every == 0:
            write_field(snaps / f"gamma_{record.cycle:05d}.field", gamma)

    t0 = time.perf_counter()
    failure = None
    with count_solves() as solves:
        try:
            gamma, history, omega = lk.lk_run(gamma0, syn.dataset(), cfg.max_cycles, cfg.stop_tol,
                                              cfg.omega, frozen, cfg.smoothing, syn.truth,
                                              callback=on_event)
        except lk.LKStagnation as exc:
            failure, gamma, history, omega = exc, None, exc.history, cfg.omega
    wall = time.perf_counter() - t0
    export.write_history(out / "history.csv", rows, lk=True)
    cycles = history[-1].cycle
    threshold = max(cfg.stop_tol, 1.1 * syn.delta if syn.delta > 0 else 0.0)
    summary = {
        "method": "lk",
        "cycles": cycles,
        "iterations": cycles,
        "omega": omega,
        "solves": dict(sorted(solves.items())),
        "iteration_solves": solves["forward"] + solves["adjoint"],
        "wall_time_s": wall,
        "residual_l2": history[-1].residual_l2,
        "delta": syn.delta,
        "stop_reason": ("stagnation" if failure else
                        "discrepancy" if history[-1].residual_l2 <= threshold else "max_cycles"),
    }
    if failure is None:
        write_field(out / "reconstruction.field", gamma)
        export.write_pgm(out / "reconstruction.pgm", gamma)
        summary["metrics"] = _metrics_dict(gamma, syn.truth)
    export.write_json(out / "summary.json", summary)
    if failure is not None:
        raise RunFailure(failure, summary)
    return summary


def lattice_from_config(cfg: ExperimentConfig) -> lat.Lattice:
    if cfg.lattice_file is not None:
        w, eps = lat.read_lattice_weights(cfg.lattice_file)
    else:
        w = make_rng(cfg.seed).uniform(cfg.w_low, cfg.w_high, (cfg.lattice_n, cfg.lattice_n))
        eps = cfg.eps_mesh
    layout = lat.LatticeLayout.theorem(w.shape[0], cfg.p_prime)
    return lat.Lattice(w, layout, eps)


def run_lattice(cfg: ExperimentConfig, out: Path | None = None, recover: bool = True) -> dict:
    out = _prepare(cfg, out)
    t0 = time.perf_counter()
    l = lattice_from_config(cfg)
    lat.write_lattice(out / "lattice.txt", l)
    detectors = l.layout.detectors
    sols = {d: lat.lattice_solve(l, d) for d in detectors}
    lat.write_measurements(out / "measurements.csv", list(sols.values()), l.layout)
    summary = {"method": "lattice", "N": l.N1, "p_prime": cfg.p_prime,
               "detectors": [list(d) for d in detectors]}
    if recover:
        data = lat.collect_data(l, detectors, cfg.p_prime, sols)
        try:
            rec = lat.recover_diagonals(data, cfg.p_prime, l.layout, eps_mesh=l.eps_mesh)
        except lat.GenericityError as exc:
            summary.update(wall_time_s=time.perf_counter() - t0, failure=str(exc))
            export.write_json(out / "summary.json", summary)
            raise
        report = lat.recovery_errors(rec, l.w)
        lat.write_recovery_report(out / "recovery.csv", report)
        summary["max_abs_error"] = max(r.max_abs_error for r in report)
        summary["diagonals"] = [{"p": r.p, "det": r.det, "condition": r.condition,
                                 "max_abs_error": r.max_abs_error} for r in report]
    summary["wall_time_s"] = time.perf_counter() - t0
    export.write_json(out / "summary.json", summary)
    return summary


def run_experiment(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    """Dispatch on ``cfg.method`` and write all outputs into ``out`` (default ``cfg.output_dir``)."""
    if cfg.method == "levelset":
        return run_levelset(cfg, out)
    if cfg.method == "lk":
        return run_lk(cfg, out)
    return run_lattice(cfg, out)
