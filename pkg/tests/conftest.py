import numpy as np
import pytest

from donflow.geometry import BackgroundGeometry
from donflow.grid import GridSpec, HermitianField, make_grid
from donflow.hermitian import HermitianMatrix, cone_margin


def constant_geometry(n=2, N=8, c=1.3, f0=0.2):
    """Background with chi = c*I and F = f0, both spatially constant."""
    grid = make_grid(GridSpec(n, N))
    omega = HermitianMatrix.identity(n)
    chi_values = c * np.broadcast_to(
        np.eye(n, dtype=complex), (grid.npoints, n, n)
    ).copy()
    f = grid.constant(f0)
    report = cone_margin(chi_values, omega, f.flat)
    return BackgroundGeometry(grid, omega, HermitianField(grid, chi_values), f, report)


@pytest.fixture
def const_geom():
    return constant_geometry()
