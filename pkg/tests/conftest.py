import numpy as np
import pytest

from dopinv.mesh import BoundarySpec, Grid, Label, ScalarField

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def layered_spec() -> BoundarySpec:
    """Source on top, measurement on the bottom, insulated sides."""
    return BoundarySpec(bottom=Label.MEASURE, top=Label.SOURCE, left=Label.INSULATING, right=Label.INSULATING)


def side_spec() -> BoundarySpec:
    """Measurement on the left, source on the right, insulated top and bottom."""
    return BoundarySpec(bottom=Label.INSULATING, top=Label.INSULATING, left=Label.MEASURE, right=Label.SOURCE)


def random_gamma(grid: Grid, seed: int, lo: float = 1.0, hi: float = 2.0) -> ScalarField:
    rng = np.random.default_rng(seed)
    return ScalarField(grid, rng.uniform(lo, hi, grid.cell_shape), "cell")


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(name: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
