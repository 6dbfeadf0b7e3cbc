import numpy as np
import pytest

from clothsim.constraints import assemble_global, build_elastic
from clothsim.mesh import build_mesh
from clothsim.scenes import grid_cloth


@pytest.fixture
def small_grid():
    """6x6 unit grid cloth, density 0.3, top row pinned."""
    verts, tris = grid_cloth(6, 1.0)
    pins = np.arange(6)
    return build_mesh(verts, tris, density=0.3, pins=pins)


@pytest.fixture
def small_system(small_grid):
    elastic = build_elastic(small_grid, stretch_stiffness=160.0, bend_stiffness=3e-4)
    system = assemble_global(small_grid, elastic, h=1.0 / 150.0)
    return small_grid, elastic, system


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
