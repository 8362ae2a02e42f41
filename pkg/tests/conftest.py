import numpy as np
import pytest

from lsilab.geometry import make_clifford_torus, make_sphere
from lsilab.operators import ScalarField
from lsilab.potential import normalize_density, solve_potential
from lsilab.transport import TransportContext


@pytest.fixture(scope="session")
def circle():
    return make_sphere(1, 4)


@pytest.fixture(scope="session")
def sphere_chart():
    return make_sphere(2, 3, variant="chart")


@pytest.fixture(scope="session")
def sphere_chart_l4():
    return make_sphere(2, 4, variant="chart")


@pytest.fixture(scope="session")
def sphere_mesh():
    return make_sphere(2, 3)


@pytest.fixture(scope="session")
def sphere_mesh_l4():
    return make_sphere(2, 4)


@pytest.fixture(scope="session")
def torus():
    return make_clifford_torus(64)


@pytest.fixture(scope="session")
def torus128():
    return make_clifford_torus(128)


def _context(geo, values):
    nd = normalize_density(ScalarField(values, geo), geo.n)
    return TransportContext.build(solve_potential(nd, geo.n), nd)


@pytest.fixture(scope="session")
def sphere_ctx(sphere_chart):
    return _context(sphere_chart, np.ones(sphere_chart.sample_count))


@pytest.fixture(scope="session")
def torus_ctx(torus):
    return _context(torus, np.exp(0.3 * np.cos(torus.params[:, 0])))


@pytest.fixture(scope="session")
def torus128_ctx(torus128):
    return _context(torus128, np.exp(0.3 * np.cos(torus128.params[:, 0])))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acceptance_log.LINES, key=lambda k: (int(k.split()[0]), k)):
            terminalreporter.write_line(acceptance_log.LINES[key])
