__version__ = "0.1.0"

from .constants import DimensionalConstants, gamma_n, lambda1, sphere_area
from .kernel import KernelOperator, assemble, ring_kernel
from .operator import CurvatureProfile, IterationState, ProblemSpec
from .radial import RadialFunction, RadialGrid, build_grid, integrate_radial
from .solver import SolveResult, SolverConfig, SolveStatus, solve
