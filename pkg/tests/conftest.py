import warnings

import pytest

from eddyheat.grid import build_grid
from eddyheat.vortex import VortexConfig, assemble_basis, build_profile


@pytest.fixture(scope="session")
def square64():
    return build_grid("square", 1 / 64)


@pytest.fixture(scope="session")
def small_basis():
    """Coarse admissible family (N=60, M=25) on the h=1/64 square."""
    cfg = VortexConfig(N=60, M=25, delta=0.2, r=0.2, eps=1 / 60, Gamma=1.0)
    grid = build_grid("square", 1 / 64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return assemble_basis(grid, cfg, build_profile(cfg))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Collect one summary line per acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
