import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from petrecon.geometry import ImageGrid, SinogramGeometry  # noqa: E402
from petrecon.projector import SystemOperator  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_system():
    """8x8 image, 12 angles x 11 radial bins, no PSF."""
    grid = ImageGrid(8, 16.0)
    geom = SinogramGeometry(12, 11, 2.0)
    return SystemOperator(grid, geom)


# --- acceptance report ---------------------------------------------------------

ACCEPTANCE = {}
CRITERIA = {
    1: "adjoint identity",
    2: "dense-matrix oracle",
    3: "MLEM monotonicity",
    4: "analytic disc projection",
    5: "gradient checks",
    6: "architecture shapes",
    7: "toy end-to-end training",
    8: "speed and accuracy ordering",
    9: "degradation with falling counts",
    10: "determinism",
}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records the outcome for the summary, then asserts it."""
    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n} ({CRITERIA[n]}): {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:2d} {name}: {detail}")
        else:
            terminalreporter.write_line(f"---- {n:2d} {name}: not run")
