import numpy as np
import pytest

from oitlab.camera import Camera, fit_camera
from oitlab.geometry import TransferFunction, TriMesh, generate_tube_mesh, synth_lineset


def quad_mesh(z, attribute=0.0, half=10.0):
    """Two triangles covering a large square at view depth ``z`` for the camera below."""
    pos = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    nrm = np.tile([0.0, 0.0, -1.0], (4, 1))
    return TriMesh(pos, nrm, np.full(4, attribute), [[0, 1, 2], [0, 2, 3]])


def axis_camera(width=8, height=6, near=0.5, far=10.0, fov=np.radians(60.0)):
    """Looking down +z from the origin; view depth equals world z."""
    return Camera((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), float(fov), near, far,
                  width, height)


@pytest.fixture
def camera():
    return axis_camera()


@pytest.fixture(scope="session")
def helix_small():
    ls = synth_lineset("helix-bundle", 2, 24, 24)
    mesh = generate_tube_mesh(ls, 0.03)
    lo, hi = ls.bounds()
    cam = fit_camera(lo, hi, 64, 48)
    tf = TransferFunction([0.0, 0.5, 1.0], [[0.2, 0.4, 1.0, 0.15], [0.3, 0.9, 0.3, 0.4],
                                            [1.0, 0.3, 0.1, 0.7]])
    return ls, mesh, cam, tf


# acceptance report: one line per criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
