import sys

import numpy as np
import pytest
from hypothesis import settings

from pcalderon.geometry import build_scenario
from pcalderon.mesh import triangulate

settings.register_profile("pcalderon", max_examples=25, deadline=None)
settings.load_profile("pcalderon")

UNIT_DISK = {"kind": "circle", "center": [0.0, 0.0], "radius": 1.0}


def disk_scenario(kind="superconducting", center=(0.2, 0.0), radius=0.3, p=2.0):
    return build_scenario(UNIT_DISK, [{"kind": kind, "shape": "circle", "center": list(center), "radius": radius}], p=p)


def boundary_angle(mesh):
    xy = mesh.nodes[mesh.outer_nodes]
    return np.arctan2(xy[:, 1], xy[:, 0])


@pytest.fixture(scope="session")
def empty_disk():
    return build_scenario(UNIT_DISK, [])


@pytest.fixture(scope="session")
def sc_disk():
    return disk_scenario()


@pytest.fixture(scope="session")
def sc_disk_mesh(sc_disk):
    return triangulate(sc_disk, 0.05)


@pytest.fixture(scope="session")
def mixed_scenario():
    return build_scenario(UNIT_DISK, [
        {"kind": "superconducting", "shape": "circle", "center": [0.2, 0.0], "radius": 0.3},
        {"kind": "insulating", "shape": "square", "center": [-0.4, 0.1], "side": 0.3},
    ])


@pytest.fixture(scope="session")
def mixed_mesh(mixed_scenario):
    return triangulate(mixed_scenario, 0.05)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines, one per criterion that ran."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n].line())
