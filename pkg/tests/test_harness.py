import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopinv import lattice as lat
from dopinv.elliptic import SolverError
from dopinv.harness import cli, experiments
from dopinv.harness.config import ConfigError, ExperimentConfig, dumps, loads, parse_value, preset
from dopinv.harness.experiments import add_noise, make_rng, run_experiment, synthesize_dataset
from dopinv.harness.export import (HISTORY_HEADER, LK_HISTORY_HEADER, export, pgm_bytes, read_history, read_pgm,
                                   read_traces, write_pgm)
from dopinv.harness.phantoms import PhantomSpec
from dopinv.mesh import Grid, ScalarField, read_field, write_field
from dopinv.metrics import metrics

SIDES = dict(bottom="insulating", top="insulating", left="measure", right="source")


# ---------------------------------------------------------------------------
# configuration


configs = st.builds(
    ExperimentConfig,
    nx=st.integers(3, 200), ny=st.integers(3, 200),
    method=st.sampled_from(["levelset", "lk", "lattice"]),
    alpha=st.floats(0, 10), beta=st.floats(1e-9, 1), tau=st.floats(1e-6, 10),
    eps=st.none() | st.floats(1e-6, 1),
    omega=st.none() | st.floats(1e-6, 1e6),
    smoothing=st.booleans(),
    source_interval=st.none() | st.tuples(st.floats(0, 0.4), st.floats(0.6, 1)),
    phantom_ya=st.floats(0.01, 0.99), phantom_yb=st.floats(0.01, 0.99),
    noise=st.sampled_from([0.0, 0.05, 0.1]), seed=st.integers(0, 2**63),
    output_dir=st.text("abcxyz_/", min_size=1, max_size=12),
)


@given(cfg=configs)
def test_config_round_trip(cfg):
    assert loads(dumps(cfg)) == cfg


def test_config_rejects_unknown_key_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key"):
        loads("nx = 10\nwidth = 3\n")
    with pytest.raises(ConfigError):
        loads("nx = ten\n")
    with pytest.raises(ConfigError):
        loads("nx 10\n")
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(noise=0.1)
    with pytest.raises(ConfigError):
        ExperimentConfig(w_low=0.9, w_high=0.1)
    with pytest.raises(ConfigError):
        ExperimentConfig(bottom="insulating", top="insulating", left="insulating", right="source")
    with pytest.raises(ConfigError):
        preset("exp3")


def test_config_comments_and_optional_values():
    cfg = loads("# header\nnx = 32  # grid\neps = auto\nsource_interval = 0.2, 0.8\nsmoothing = yes\n")
    assert cfg.nx == 32 and cfg.eps is None and cfg.source_interval == (0.2, 0.8) and cfg.smoothing
    assert parse_value("omega", "none") is None


def test_presets_are_valid():
    for name in ("exp1-exact", "exp1-noisy", "exp2-exact", "lattice-recovery"):
        assert preset(name).validate() is None
    assert preset("exp1-noisy").noise == 0.1 and preset("exp1-noisy").seed is not None


# ---------------------------------------------------------------------------
# phantoms, data and noise


def test_phantoms():
    g = Grid(65, 65)
    lin = PhantomSpec("linear", 0.2, 0.6)
    assert lin.curve(0.0) == pytest.approx(0.2) and lin.curve(1.0) == pytest.approx(0.6)
    f = lin.build(g)
    assert set(np.unique(f.values)) == {1.0, 2.0}
    assert f.values[0].max() == 1.0 and f.values[-1].min() == 2.0
    ana = PhantomSpec("analytic", c0=0.5, c1=0.15)
    assert ana.curve(0.25) == pytest.approx(0.65)
    with pytest.raises(ValueError):
        PhantomSpec("analytic", c0=0.9, c1=0.2)
    with pytest.raises(ValueError):
        PhantomSpec("linear", 0.2, 1.2)


def test_custom_phantom(tmp_path):
    g = Grid(9, 9)
    f = ScalarField.from_function(g, lambda x, y: np.where(x > 0.5, 2.0, 1.0), "cell")
    write_field(tmp_path / "p.field", f)
    assert PhantomSpec("custom", path=str(tmp_path / "p.field")).build(g) == f
    with pytest.raises(ValueError):
        PhantomSpec("custom", path=str(tmp_path / "p.field")).build(Grid(10, 10))


def test_noise_free_data_are_bit_exact():
    syn = synthesize_dataset(ExperimentConfig(nx=16, ny=16, **SIDES))
    assert syn.delta == 0 and all(np.array_equal(a, b) for a, b in zip(syn.traces, syn.clean))


def test_noise_bound_and_seed_determinism():
    cfg = ExperimentConfig(nx=16, ny=16, noise=0.1, seed=7, **SIDES)
    a, b = synthesize_dataset(cfg), synthesize_dataset(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.traces, b.traces))
    ymax = max(np.abs(t).max() for t in a.clean)
    assert max(np.abs(x - y).max() for x, y in zip(a.traces, a.clean)) <= 0.1 * ymax
    c = synthesize_dataset(cfg.replace(seed=8))
    assert not np.array_equal(a.traces[0], c.traces[0])


def test_noise_delta_bounds_stacked_norm():
    seg = np.full(20, 0.05)
    clean = [np.linspace(1, 2, 20), np.linspace(-3, 1, 20)]
    noisy, delta = add_noise(clean, 0.1, make_rng(0), seg)
    stacked = np.sqrt(sum(np.sum(seg * (n - c) ** 2) for n, c in zip(noisy, clean)))
    assert stacked <= delta == pytest.approx(0.1 * 3 * np.sqrt(2))


def test_rng_is_pcg64_stream():
    assert make_rng(5).uniform() == np.random.Generator(np.random.PCG64(5)).uniform()


# ---------------------------------------------------------------------------
# metrics and export


def test_metrics_examples():
    g = Grid(65, 65)
    truth = ScalarField.from_function(g, lambda x, y: np.where(y > 0.5, 2.0, 1.0), "cell")
    assert tuple(metrics(truth, truth)) == (0.0, 0.0, 0.0)
    swapped = truth.with_values(3 - truth.values)
    assert metrics(swapped, truth).misclassified_fraction == 1.0
    assert metrics(swapped, truth).jaccard_distance == 1.0
    shifted = ScalarField.from_function(g, lambda x, y: np.where(y > 0.6, 2.0, 1.0), "cell")
    assert abs(metrics(shifted, truth).misclassified_fraction - 0.1) <= g.hx
    with pytest.raises(ValueError):
        metrics(truth, ScalarField.constant(Grid(9, 9), 1.0, "cell"))


def test_pgm_mapping_and_orientation(tmp_path):
    g = Grid(9, 5)
    f = ScalarField.from_function(g, lambda x, y: np.where(y > 0.5, 2.0, 1.0), "cell")
    write_pgm(tmp_path / "f.pgm", f)
    pix = read_pgm(tmp_path / "f.pgm")
    assert pix.shape == (4, 8) and set(np.unique(pix)) == {0, 255}
    assert np.all(pix[0] == 255) and np.all(pix[-1] == 0)
    assert pgm_bytes(f) == pgm_bytes(f) and pgm_bytes(f).startswith(b"P2\n8 4\n255\n")


def test_export_formats(tmp_path):
    f = ScalarField(Grid(6, 6), np.random.default_rng(0).standard_normal((6, 6)))
    export(tmp_path / "a.field", f)
    assert read_field(tmp_path / "a.field") == f
    with pytest.raises(ValueError):
        export(tmp_path / "a.png", f)


# ---------------------------------------------------------------------------
# experiment runs


def test_levelset_run_outputs_and_solve_ledger(tmp_path):
    cfg = ExperimentConfig(nx=16, ny=16, **SIDES, phantom_ya=0.2, phantom_yb=0.6, beta=1e-6, tau=0.05,
                           max_iter=6, snapshot_every=3)
    s = run_experiment(cfg, tmp_path)
    assert s["iteration_solves"] == 3 * s["iterations"] and s["solves"]["setup"] == 1
    hist = read_history(tmp_path / "history.csv")
    assert list(hist[0]) == HISTORY_HEADER and len(hist) == s["iterations"] + 1
    assert (tmp_path / "snapshots" / "phi_00003.field").exists()
    assert set(np.unique(read_pgm(tmp_path / "reconstruction.pgm"))) <= {0, 255}
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved["metrics"]["misclassified_fraction"] == s["metrics"]["misclassified_fraction"]
    assert loads((tmp_path / "config.txt").read_text()) == cfg
    assert len(read_traces(tmp_path / "data" / "traces.csv")) == 1


def test_lk_run_outputs_and_solve_ledger(tmp_path):
    cfg = ExperimentConfig(nx=16, ny=16, method="lk", n_sources=3, delta_x=0.1, max_cycles=2, omega=0.5,
                           frozen_width=1)
    s = run_experiment(cfg, tmp_path)
    assert s["cycles"] == 2 and s["iteration_solves"] == 2 * 3 * 2
    hist = read_history(tmp_path / "history.csv")
    assert list(hist[0]) == LK_HISTORY_HEADER and len(hist) == 6
    assert [int(r["component_j"]) for r in hist] == [1, 2, 3, 1, 2, 3]
    assert len(read_traces(tmp_path / "data" / "traces.csv")) == 3


def test_lattice_run(tmp_path):
    s = run_experiment(preset("lattice-recovery"), tmp_path)
    assert s["max_abs_error"] <= 1e-8 and len(s["diagonals"]) == 3
    assert (tmp_path / "recovery.csv").exists() and (tmp_path / "lattice.txt").exists()


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = ExperimentConfig(nx=12, ny=12, **SIDES, beta=1e-6, tau=0.05, max_iter=3, noise=0.05, seed=2,
                           alpha=5e-4, snapshot_every=1)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "summary.json")
    assert len(files) > 8
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


# ---------------------------------------------------------------------------
# command line


def test_cli_success(tmp_path, capsys):
    code = cli.main(["lattice", "recover", "--lattice-n", "5", "--p-prime", "2", "--seed", "3",
                     "--output-dir", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["max_abs_error"] <= 1e-8
    assert cli.main(["forward", "--nx", "12", "--ny", "12", "--output-dir", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "traces.csv").exists()


def test_cli_metrics(tmp_path, capsys):
    g = Grid(9, 9)
    f = ScalarField.from_function(g, lambda x, y: np.where(y > 0.5, 2.0, 1.0), "cell")
    write_field(tmp_path / "a.field", f)
    assert cli.main(["metrics", str(tmp_path / "a.field"), str(tmp_path / "a.field")]) == 0
    assert json.loads(capsys.readouterr().out)["misclassified_fraction"] == 0.0


def test_cli_config_file_merged_with_flags(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("method = lattice\nlattice_n = 5\np_prime = 2\nseed = 1\n")
    code = cli.main(["lattice", "solve", "--config", str(tmp_path / "c.txt"), "--lattice-n", "6",
                     "--output-dir", str(tmp_path / "o")])
    assert code == 0 and json.loads(capsys.readouterr().out)["N"] == 6


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("bogus = 1\n")
    assert cli.main(["lattice", "solve", "--config", str(tmp_path / "c.txt")]) == 2
    assert cli.main(["synthesize", "--noise", "0.1", "--output-dir", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_cli_solver_failure_exit_code(tmp_path, monkeypatch):
    def fail(*a, **k):
        raise SolverError("did not converge", 1.0)

    monkeypatch.setattr(cli, "synthesize_dataset", fail)
    assert cli.main(["forward", "--output-dir", str(tmp_path)]) == 3


def test_cli_genericity_exit_code_keeps_partial_outputs(tmp_path, monkeypatch):
    def degenerate(*a, **k):
        raise lat.GenericityError(2, 0.0, 1.0)

    monkeypatch.setattr(experiments.lat, "recover_diagonals", degenerate)
    assert cli.main(["preset", "lattice-recovery", "--output-dir", str(tmp_path)]) == 4
    assert "failure" in json.loads((tmp_path / "summary.json").read_text())
    assert (tmp_path / "measurements.csv").exists()


@settings(max_examples=10, deadline=None)
@given(n=st.integers(3, 6))
def test_cli_lattice_solve_writes_all_detectors(tmp_path_factory, n):
    out = tmp_path_factory.mktemp("l")
    assert cli.main(["lattice", "solve", "--lattice-n", str(n), "--p-prime", "1", "--seed", "0",
                     "--output-dir", str(out)]) == 0
    rows = (out / "measurements.csv").read_text().splitlines()
    assert len(rows) == 1 + len(lat.LatticeLayout.theorem(n, 1).gamma1)
