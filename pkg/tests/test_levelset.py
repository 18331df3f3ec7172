import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import side_spec
from dopinv.elliptic import ConductivitySolver, count_solves, measure_norm
from dopinv.levelset import (InverseDatum, LevelSetState, StagnationError, adjoint_gradient, check_pin_mask,
                             curvature, evolve, helmholtz_matrix, measure_layer_mask, project,
                             project_smooth, signed_distance_to_line, solve_velocity_equation,
                             tikhonov_value, velocity_rhs, velocity_solve)
from dopinv.mesh import Grid, ScalarField, norms


def cell_field(grid, fn):
    return ScalarField.from_function(grid, fn, "cell")


def exact_datum(phi: ScalarField, eps: float, spec=None) -> InverseDatum:
    spec = spec or side_spec()
    gamma, _ = project_smooth(phi, eps)
    solver = ConductivitySolver(gamma, spec)
    U = np.ones(len(solver.source_nodes))
    return InverseDatum(spec, U, solver.dtn(U))


def junction_datum(grid, noise=0.0, seed=0):
    truth = cell_field(grid, lambda x, y: np.where(y > 0.2 + 0.4 * x, 2.0, 1.0))
    solver = ConductivitySolver(truth, side_spec())
    U = np.ones(len(solver.source_nodes))
    Y = solver.dtn(U)
    delta = 0.0
    if noise:
        Y = Y + noise * np.abs(Y).max() * np.random.default_rng(seed).uniform(-1, 1, Y.size)
        delta = noise * np.abs(Y).max() * np.sqrt(solver.segments.sum())
    return truth, InverseDatum(side_spec(), U, Y, delta)


# ---------------------------------------------------------------------------
# projections


def test_project_examples():
    g = Grid(9, 9)
    assert np.all(project(ScalarField.constant(g, 1.0, "cell")).values == 2)
    assert np.all(project(ScalarField.constant(g, -1.0, "cell")).values == 1)
    P = project(cell_field(g, lambda x, y: x - 0.5)).values
    X, _ = g.cell_coords()
    assert np.all(P[X < 0.5] == 1) and np.all(P[X > 0.5] == 2)
    assert project(ScalarField.constant(g, 0.0, "cell")).values[0, 0] == 1.5


@given(seed=st.integers(0, 2**20))
def test_projection_is_two_valued_and_idempotent(seed):
    g = Grid(7, 7)
    phi = ScalarField(g, np.random.default_rng(seed).standard_normal(g.cell_shape), "cell")
    P = project(phi)
    assert set(np.unique(P.values)) <= {1.0, 2.0}
    assert project(P - 1.5) == P


def test_project_smooth_examples():
    g = Grid(3, 3)
    eps = 0.1
    for t, expected in ((0.0, 1.5), (-2 * eps, 1.0), (2 * eps, 2.0), (eps / 2, 1.75)):
        P, _ = project_smooth(ScalarField.constant(g, t, "cell"), eps)
        assert P.values[0, 0] == pytest.approx(expected)
    t = np.linspace(-eps, eps, 2001)
    _, dP = project_smooth(ScalarField(Grid(2002, 3), np.vstack([t, t]), "cell"), eps)
    assert np.trapezoid(dP.values[0], t) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        project_smooth(ScalarField.constant(g, 0.0, "cell"), 0.0)


@given(t=st.floats(-10, 10), eps=st.floats(1e-3, 1))
def test_project_smooth_monotone_ramp(t, eps):
    g = Grid(3, 3)
    P, dP = project_smooth(ScalarField.constant(g, t, "cell"), eps)
    P2, _ = project_smooth(ScalarField.constant(g, t + 1e-3, "cell"), eps)
    p, d = P.values[0, 0], dP.values[0, 0]
    assert 1 <= p <= 2 and P2.values[0, 0] >= p
    assert d == (1 / (2 * eps) if abs(t) < eps else 0.0)


# ---------------------------------------------------------------------------
# gradient


def test_zero_residual_gives_zero_gradient():
    g = Grid(12, 12)
    phi = signed_distance_to_line(g, 0.4, 0.3)
    r, w = adjoint_gradient(project_smooth(phi, 0.1)[0], exact_datum(phi, 0.1))
    assert np.abs(r).max() < 1e-13 and np.abs(w.values).max() < 1e-10


def test_zero_voltage_gives_negative_data_residual():
    g = Grid(12, 12)
    gamma = ScalarField.constant(g, 1.5, "cell")
    Y = np.linspace(0.5, 1.0, 12)
    r, w = adjoint_gradient(gamma, InverseDatum(side_spec(), np.zeros(12), Y))
    np.testing.assert_array_equal(r, -Y)
    assert not np.any(w.values)


def test_gradient_matches_finite_differences():
    g = Grid(32, 32)
    rng = np.random.default_rng(5)
    gamma = ScalarField(g, rng.uniform(1.2, 1.8, g.cell_shape), "cell")
    _, datum = junction_datum(g)
    _, w = adjoint_gradient(gamma, datum)
    X, Y = g.cell_coords()

    def misfit(t, h):
        s = ConductivitySolver(gamma.with_values(gamma.values + t * h), datum.spec)
        return 0.5 * measure_norm(s.dtn(datum.U) - datum.Y_delta, s.segments) ** 2

    for k in range(3):
        a, b = rng.uniform(1, 4, 2)
        h = np.sin(a * X + k) * np.cos(b * Y)
        fd = (misfit(1e-5, h) - misfit(-1e-5, h)) / 2e-5
        an = np.sum(w.values * h) * g.hx * g.hy
        assert abs(fd - an) <= 1e-4 * abs(fd)


# ---------------------------------------------------------------------------
# curvature and velocity


def test_flat_interface_has_zero_curvature():
    g = Grid(40, 40)
    phi = cell_field(g, lambda x, y: 0.3 * x + y - 0.6)
    k = curvature(phi, 2 * g.hx).values
    assert np.abs(k[2:-2, 2:-2]).max() <= 1e-8


def test_circle_curvature_on_band():
    g = Grid(128, 128)
    R = 0.25
    phi = cell_field(g, lambda x, y: np.hypot(x - 0.5, y - 0.5) - R)
    eps = 2 * g.hx
    k = curvature(phi, eps).values
    band = np.abs(phi.values) < eps
    assert np.abs(k[band] * R - 1).max() <= 0.1


def test_curvature_vanishes_where_projection_is_flat():
    g = Grid(20, 20)
    phi = cell_field(g, lambda x, y: np.hypot(x, y) + 5)
    assert not np.any(curvature(phi, 0.01).values)
    with pytest.raises(ValueError):
        curvature(phi, 0.01, eta=0.0)


def test_velocity_zero_and_constant_rhs():
    g = Grid(10, 12)
    assert not np.any(solve_velocity_equation(g, np.zeros(g.cell_shape)))
    np.testing.assert_allclose(solve_velocity_equation(g, np.full(g.cell_shape, 2.5)), -2.5, atol=1e-12)


def test_velocity_matches_dense_oracle():
    g = Grid(17, 17)
    rhs = np.random.default_rng(0).standard_normal(g.cell_shape)
    v = solve_velocity_equation(g, rhs)
    dense = -np.linalg.solve(helmholtz_matrix(g).toarray(), rhs.ravel())
    np.testing.assert_allclose(v.ravel(), dense, atol=1e-10)


def test_velocity_operator_is_neumann_helmholtz():
    # a cosine mode satisfies the discrete Neumann condition exactly
    g = Grid(17, 9)
    X, Y = g.cell_coords()
    mode = np.cos(np.pi * X) * np.cos(2 * np.pi * Y)
    lam = (2 - 2 * np.cos(np.pi * g.hx)) / g.hx**2 + (2 - 2 * np.cos(2 * np.pi * g.hy)) / g.hy**2
    np.testing.assert_allclose(solve_velocity_equation(g, mode), -mode / (1 + lam), atol=1e-12)


def test_velocity_rhs_combines_gradient_and_curvature():
    g = Grid(16, 16)
    phi = signed_distance_to_line(g, 0.5, 0.2)
    state = LevelSetState(phi, phi, eps=0.1, beta=0.3)
    w = ScalarField(g, np.random.default_rng(1).standard_normal(g.cell_shape), "cell")
    _, dP = project_smooth(phi, 0.1)
    expected = dP.values * (w.values - 0.3 * dP.values * curvature(phi, 0.1).values)
    np.testing.assert_allclose(velocity_rhs(state, w), expected)


def test_pinned_cells_do_not_move():
    g = Grid(16, 16)
    spec = side_spec()
    mask = measure_layer_mask(g, spec)
    assert mask[:, 0].all() and not mask[:, 1:].any()
    phi = signed_distance_to_line(g)
    state = LevelSetState(phi, phi, eps=0.2, pin_mask=mask)
    w = ScalarField(g, np.ones(g.cell_shape), "cell")
    assert not np.any(velocity_solve(state, w).values[mask])
    check_pin_mask(mask, g, spec)
    bad = mask.copy()
    bad[5, 5] = True
    with pytest.raises(ValueError):
        check_pin_mask(bad, g, spec)


def test_state_validation():
    g = Grid(6, 6)
    phi = signed_distance_to_line(g)
    with pytest.raises(ValueError):
        LevelSetState(phi, phi, eps=0.0)
    with pytest.raises(ValueError):
        LevelSetState(phi, signed_distance_to_line(Grid(7, 6)), eps=0.1)
    with pytest.raises(ValueError):
        LevelSetState(phi, phi, eps=0.1, alpha=-1)


# ---------------------------------------------------------------------------
# functional and evolution


def test_tikhonov_at_exact_solution_is_bv_term():
    g = Grid(20, 20)
    phi = signed_distance_to_line(g, 0.45, 0.3)
    state = LevelSetState(phi, phi, eps=0.1, alpha=0.01, beta=0.2)
    G = tikhonov_value(state, exact_datum(phi, 0.1))
    assert G == pytest.approx(0.01 * 2 * 0.2 * norms(project(phi)).bv, rel=1e-10)


def test_tikhonov_without_regularization_is_squared_residual():
    g = Grid(20, 20)
    phi = signed_distance_to_line(g, 0.45, 0.3)
    datum = exact_datum(signed_distance_to_line(g, 0.6), 0.1)
    state = LevelSetState(phi, signed_distance_to_line(g, 0.1), eps=0.1, alpha=0.0)
    r, _ = adjoint_gradient(project_smooth(phi, 0.1)[0], datum)
    seg = ConductivitySolver(ScalarField.constant(g, 1.0, "cell"), datum.spec).segments
    assert tikhonov_value(state, datum) == pytest.approx(measure_norm(r, seg) ** 2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**20), alpha=st.floats(0, 10), beta=st.floats(1e-6, 10))
def test_tikhonov_non_negative(seed, alpha, beta):
    g = Grid(6, 6)
    rng = np.random.default_rng(seed)
    phi = ScalarField(g, rng.standard_normal(g.cell_shape), "cell")
    phi0 = ScalarField(g, rng.standard_normal(g.cell_shape), "cell")
    datum = InverseDatum(side_spec(), np.ones(6), rng.standard_normal(6))
    assert tikhonov_value(LevelSetState(phi, phi0, 0.3, beta, alpha), datum) >= 0


def test_evolve_exits_at_exact_solution():
    g = Grid(16, 16)
    phi = signed_distance_to_line(g, 0.4, 0.2)
    with count_solves() as c:
        final, hist = evolve(LevelSetState(phi, phi, 0.1), exact_datum(phi, 0.1), max_iter=10, stop_tol=1e-12)
    assert len(hist) == 1 and final.phi == phi
    assert c["adjoint"] == 0 and c["setup"] == 1


def test_zero_velocity_leaves_phi_unchanged():
    g = Grid(16, 16)
    phi = ScalarField.constant(g, 3.0, "cell")  # far outside the ramp band
    datum = InverseDatum(side_spec(), np.ones(16), np.full(16, 0.3))
    final, hist = evolve(LevelSetState(phi, phi, 0.1), datum, max_iter=3)
    assert final.phi == phi and final.iter == 3


def test_evolve_monotone_and_three_solves_per_iteration():
    g = Grid(24, 24)
    truth, datum = junction_datum(g)
    phi0 = signed_distance_to_line(g)
    state = LevelSetState(phi0, phi0, eps=2 * g.hx, beta=1e-6, alpha=1e-3, step=0.05)
    with count_solves() as c:
        final, hist = evolve(state, datum, max_iter=15, truth=truth)
    G = [h.G_alpha for h in hist]
    assert all(b <= a for a, b in zip(G, G[1:]))
    assert G[-1] < G[0]
    assert c["forward"] == c["adjoint"] == c["velocity"] == 15
    assert c["setup"] == 1 and c["backtrack"] == sum(h.halvings for h in hist)
    assert final.iter == 15 and [h.iter for h in hist] == list(range(16))


def test_discrepancy_stop():
    g = Grid(24, 24)
    truth, datum = junction_datum(g, noise=0.1, seed=2)
    phi0 = signed_distance_to_line(g)
    state = LevelSetState(phi0, phi0, eps=2 * g.hx, beta=1e-6, alpha=1e-3, step=0.05)
    final, hist = evolve(state, datum, max_iter=500, truth=truth)
    assert hist[-1].residual_l2 <= 1.1 * datum.delta
    assert all(h.residual_l2 > 1.1 * datum.delta for h in hist[:-1])


def test_stagnation_reports_diagnostics():
    g = Grid(16, 16)
    _, datum = junction_datum(g)
    phi0 = signed_distance_to_line(g)
    state = LevelSetState(phi0, phi0, eps=2 * g.hx, beta=1e-6, alpha=1e-3, step=1e6)
    with pytest.raises(StagnationError) as exc:
        evolve(state, datum, max_iter=5, max_halvings=0)
    assert exc.value.iteration == 0 and len(exc.value.history) == 1


def test_signed_distance_to_line():
    g = Grid(11, 11)
    phi = signed_distance_to_line(g, 0.5, 1.0)
    X, Y = g.cell_coords()
    np.testing.assert_allclose(phi.values, (Y - X) / np.sqrt(2), atol=1e-15)
