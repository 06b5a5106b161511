import numpy as np
import pytest

from phasetopo.assembly import Model
from phasetopo.material import MaterialParams, PhaseParams, VolumeControl
from phasetopo.mesh import DIRICHLET, NEUMANN, Box, build_box_grid, plane, select_region


def small_cantilever(nx=4, ny=2, control=None, g=1e6, material=None, phase=None, body_force=None):
    """Clamped-left block with a downward traction patch on the right edge."""
    m = build_box_grid((2.0, 1.0), (nx, ny))
    regions = [
        select_region(m, plane(2, 0, 0.0), DIRICHLET, 0.0, "clamp"),
        select_region(m, Box((2.0, 0.0), (2.0, max(0.5, 1.0 / ny))), NEUMANN, (0.0, -g), "load"),
    ]
    return Model(
        m,
        regions,
        material or MaterialParams(E=1e9, nu=0.3),
        phase or PhaseParams(gamma=0.5, kappa_phi=1e5, kappa_b=1e8),
        control or VolumeControl.minimization(1e6),
        body_force,
    )


def small_block3d(n=(2, 1, 1), control=None, g=1e6):
    m = build_box_grid((2.0, 1.0, 1.0), n)
    regions = [
        select_region(m, plane(3, 0, 0.0), DIRICHLET, 0.0, "clamp"),
        select_region(m, Box((2.0, None, 0.0), (2.0, None, max(0.5, 1.0 / n[2]))), NEUMANN, (0.0, 0.0, -g), "load"),
    ]
    return Model(m, regions, MaterialParams(E=1e9, nu=0.3), PhaseParams(gamma=0.5, kappa_phi=1e5, kappa_b=1e8),
                 control or VolumeControl.minimization(1e6))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
