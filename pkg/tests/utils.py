import pytest

from conformal.qcurv.constants import lambda1
from conformal.qcurv.kernel import assemble
from conformal.qcurv.operator import CurvatureProfile, ProblemSpec
from conformal.qcurv.radial import build_grid
from conformal.qcurv.solver import SolverConfig, solve


# Small grids keep assembly fast; r_max stays above the solve minimum
SMALL_R_MAX = 40.0
SMALL_SIZE = 128


@pytest.fixture(scope="session")
def small_kernel_n3():
    return assemble(build_grid(3, r_max=SMALL_R_MAX, size=SMALL_SIZE))


@pytest.fixture(scope="session")
def small_kernel_n5():
    return assemble(build_grid(5, r_max=SMALL_R_MAX, size=SMALL_SIZE))


# Default grids (M = 2048, R = 100), only requested by slow tests
@pytest.fixture(scope="session")
def kernel_n3():
    return assemble(build_grid(3))


@pytest.fixture(scope="session")
def kernel_n5():
    return assemble(build_grid(5))


# Q = 2 e^{-r^4} at twice the sphere value, solved on the small n = 3 grid
@pytest.fixture(scope="session")
def small_quartic_solve(small_kernel_n3):
    spec = ProblemSpec(
        n=3, kappa=2 * lambda1(3), q=CurvatureProfile.quartic(2.0, 1.0), variant="THM2"
    )
    return spec, solve(spec, SolverConfig(), small_kernel_n3)
