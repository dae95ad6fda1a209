import numpy as np
import pytest

from srgseg.phantom import PhantomSpec, Structure


def four_structure_spec(dims=(32, 32, 32), stddev=0.0, background_stddev=0.0, seed=0):
    """Four well-separated structures scaled to ``dims`` (1 mm voxels)."""
    nx, ny, nz = dims
    f = np.array([nx, ny, nz], float) / 64.0
    structures = (
        Structure(1, "ball", tuple(np.array([18, 18, 18]) * f), (9 * f.min(),), 100.0, stddev),
        Structure(2, "ball", tuple(np.array([46, 18, 46]) * f), (10 * f.min(),), 60.0, stddev),
        Structure(3, "box", tuple(np.array([18, 46, 40]) * f), tuple(np.array([14, 12, 16]) * f), 140.0, stddev),
        Structure(4, "ball", tuple(np.array([46, 46, 18]) * f), (8 * f.min(),), 180.0, stddev),
    )
    return PhantomSpec(dims, (1.0, 1.0, 1.0), structures, 20.0, background_stddev, seed)


@pytest.fixture
def small_spec():
    return four_structure_spec((16, 16, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
