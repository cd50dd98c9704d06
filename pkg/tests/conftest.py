import sys

import numpy as np
import pytest

from splitrom.fom import FlowProblem
from splitrom.mesh import BoundaryLabel, TriMesh, generate_channel


def unit_triangle():
    """Reference triangle (0,0), (1,0), (0,1): inlet on the left, outlet nowhere."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    labels = np.array([BoundaryLabel.WallDirichlet, BoundaryLabel.WallDirichlet,
                       BoundaryLabel.InletDirichlet])
    return TriMesh(verts, np.array([[0, 1, 2]]), edges, labels).validate()


@pytest.fixture(scope="session")
def small_channel():
    return generate_channel(2.0, 1.0, 8, 4)


@pytest.fixture(scope="session")
def small_problem(small_channel):
    return FlowProblem(small_channel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
