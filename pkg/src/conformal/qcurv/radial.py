"""
Graded radial grids, full-space quadrature of radial functions and finite differences.

A radial function f(|y|) on R^n is integrated as

    int_{B_R} f(|y|) dy  ~  omega_{n-1} * sum_j w_j f(r_j) r_j^{n-1}

on nodes r_j = R (j/M)^g. The weights are an end-corrected trapezoid rule in the
uniform variable tau = j/M times dr/dtau, calibrated so that f = 1 reproduces the
volume of the ball exactly.

"""

import csv
import logging
import math

from dataclasses import dataclass
from functools import cached_property
from typing import Protocol, Union

import numpy as np

from scipy import integrate, interpolate, special

from .config import DEFAULT_GRADING, DEFAULT_GRID_SIZE, DEFAULT_R_MAX, MIN_GRID_SIZE
from .constants import DimensionalConstants


# Gregory end corrections of the trapezoid rule (exact for cubics)
GREGORY_END_WEIGHTS = np.array([3 / 8, 7 / 6, 23 / 24])
STENCIL_SIZE = 5


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """
    Graded nodes on [0, r_max] with full-space quadrature weights for dimension n.

    Parameters:
    -----------
    n: int
        Dimension of the ambient space.
    nodes: np.ndarray
        Strictly increasing nodes, nodes[0] == 0 and nodes[-1] == r_max.
    weights: np.ndarray
        Radial weights w_j (the sphere measure and r^{n-1} are not folded in).
    r_max: float
        Truncation radius.
    size: int
        Number of intervals M (there are M + 1 nodes).
    grading: float
        Grading exponent g of r_j = r_max (j/M)^g.

    """

    n: int
    nodes: np.ndarray
    weights: np.ndarray
    r_max: float
    size: int
    grading: float

    @property
    def constants(self) -> DimensionalConstants:
        return DimensionalConstants.for_dimension(self.n)

    @property
    def key(self) -> tuple:
        return (self.n, self.size, self.r_max, self.grading)

    @cached_property
    def measure(self) -> np.ndarray:
        """Full-space quadrature measure omega_{n-1} w_j r_j^{n-1} of every node."""
        return self.constants.omega_nm1 * self.weights * self.nodes ** (self.n - 1)

    @cached_property
    def fd_stencils(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Five-point stencils (node indices, first-derivative weights, second-derivative weights).

        The even extension through r = 0 is used for the first two rows, one-sided
        stencils for the last two.

        """
        r = self.nodes
        m = self.size
        indices = np.zeros((m + 1, STENCIL_SIZE), dtype=int)
        first = np.zeros((m + 1, STENCIL_SIZE))
        second = np.zeros((m + 1, STENCIL_SIZE))
        for i in range(m + 1):
            if i == 0:
                idx = np.array([2, 1, 0, 1, 2])
                x = np.array([-r[2], -r[1], 0.0, r[1], r[2]])
            elif i == 1:
                idx = np.array([1, 0, 1, 2, 3])
                x = np.array([-r[1], 0.0, r[1], r[2], r[3]])
            else:
                start = min(max(i - 2, 0), m - 4)
                idx = np.arange(start, start + STENCIL_SIZE)
                x = r[idx]
            c = fd_weights(r[i], x, 2)
            indices[i] = idx
            first[i] = c[1]
            second[i] = c[2]
        # Odd derivatives vanish at the origin
        first[0] = 0.0
        return indices, first, second

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.key == other.key and np.array_equal(self.nodes, other.nodes)
        )


def build_grid(
    n: int,
    r_max: float = DEFAULT_R_MAX,
    size: int = DEFAULT_GRID_SIZE,
    grading: float = DEFAULT_GRADING,
) -> RadialGrid:
    """
    Build the graded grid r_j = r_max (j/size)^grading.

    Parameters:
    -----------
    n: int
        Dimension (>= 3).
    r_max: float
        Truncation radius (> 0).
    size: int
        Number of intervals (>= 64).
    grading: float
        Grading exponent (>= 1, so that dr/dtau stays finite at the origin).

    """
    consts = DimensionalConstants.for_dimension(n)
    if int(size) != size or size < MIN_GRID_SIZE:
        raise ValueError(f"Grid size must be an integer >= {MIN_GRID_SIZE}, got {size}")
    if not (math.isfinite(r_max) and r_max > 0):
        raise ValueError(f"r_max must be a positive finite number, got {r_max}")
    if not (math.isfinite(grading) and grading >= 1):
        raise ValueError(f"Grading exponent must be >= 1, got {grading}")
    size = int(size)

    tau = np.arange(size + 1) / size
    nodes = r_max * tau**grading
    nodes[0] = 0.0
    nodes[-1] = r_max
    if np.any(np.diff(nodes) <= 0):
        raise ValueError(
            f"Non-monotone grid parameterization (r_max={r_max}, size={size}, grading={grading})"
        )

    gregory = np.ones(size + 1)
    gregory[:3] = GREGORY_END_WEIGHTS
    gregory[-3:] = GREGORY_END_WEIGHTS[::-1]
    jacobian = r_max * grading * tau ** (grading - 1)
    weights = gregory * jacobian / size

    # One scalar calibration makes the ball volume exact
    ball = consts.omega_nm1 * r_max**n / n
    raw = consts.omega_nm1 * np.dot(weights, nodes ** (n - 1))
    weights = weights * (ball / raw)

    return RadialGrid(
        n=consts.n,
        nodes=nodes,
        weights=weights,
        r_max=float(r_max),
        size=size,
        grading=float(grading),
    )


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """
    A radial profile sampled on a grid.

    The interpolant is a monotone cubic (PCHIP) through the nodes mirrored to
    negative r, so that it is even and its odd derivatives vanish at the origin.

    """

    grid: RadialGrid
    values: np.ndarray
    rule: str = "pchip-even"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.nodes.shape:
            raise ValueError(
                f"Expected {self.grid.nodes.shape[0]} node values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("RadialFunction values must be finite at every node")
        if self.rule != "pchip-even":
            raise ValueError(f"Unknown interpolation rule {self.rule}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @cached_property
    def _interpolant(self) -> interpolate.PchipInterpolator:
        nodes = self.grid.nodes
        x = np.concatenate([-nodes[:0:-1], nodes])
        y = np.concatenate([self.values[:0:-1], self.values])
        return interpolate.PchipInterpolator(x, y, extrapolate=False)

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if np.any(r > self.grid.r_max):
            raise ValueError(f"Cannot evaluate beyond r_max={self.grid.r_max}")
        out = np.asarray(self._interpolant(r), dtype=float)
        # Node values are returned verbatim
        idx = np.clip(np.searchsorted(self.grid.nodes, r), 0, self.grid.size)
        on_node = self.grid.nodes[idx] == r
        out = np.where(on_node, self.values[idx], out)
        return out if out.ndim else float(out)

    def with_values(self, values) -> "RadialFunction":
        return RadialFunction(self.grid, values, self.rule)

    def to_csv(self, path: str):
        write_columns(path, {"r": self.grid.nodes, "value": self.values})

    @classmethod
    def from_csv(cls, path: str, grid: RadialGrid) -> "RadialFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != grid.nodes.shape[0] or not np.array_equal(data[:, 0], grid.nodes):
            raise ValueError(f"Nodes stored in {path} do not match the grid")
        return cls(grid, data[:, 1])


class TailModel(Protocol):
    def bound(self, grid: RadialGrid, values: np.ndarray) -> float: ...


@dataclass(frozen=True)
class PowerTail:
    """Density decaying like f(R) (R/r)^exponent beyond the truncation radius."""

    exponent: float

    def bound(self, grid: RadialGrid, values: np.ndarray) -> float:
        n = grid.n
        if self.exponent <= n:
            return math.inf
        return (
            grid.constants.omega_nm1 * float(values[-1]) * grid.r_max**n / (self.exponent - n)
        )


@dataclass(frozen=True)
class GaussianEnvelopeTail:
    """
    Density dominated by exp(log_amplitude - rate r^power) beyond the truncation radius.

    The tail integral is exact for the envelope, through the regularized upper
    incomplete gamma function.

    """

    log_amplitude: float
    rate: float
    power: float

    def bound(self, grid: RadialGrid, values: np.ndarray) -> float:
        n, a, p = grid.n, self.rate, self.power
        if a <= 0 or p <= 0:
            return math.inf
        q = special.gammaincc(n / p, a * grid.r_max**p)
        if q == 0.0:
            return 0.0
        log_prefactor = (
            self.log_amplitude + special.gammaln(n / p) - (n / p) * math.log(a) - math.log(p)
        )
        return grid.constants.omega_nm1 * math.exp(log_prefactor + math.log(q))


@dataclass(frozen=True)
class LogSlopeTail:
    """
    Log-concave extrapolation of f(r) r^{n-1} from the last two nodes.

    A non-negative slope means the sampled profile gives no evidence of decay and
    the bound is infinite.

    """

    def bound(self, grid: RadialGrid, values: np.ndarray) -> float:
        f_prev, f_last = float(values[-2]), float(values[-1])
        if f_last <= 0:
            return 0.0
        if f_prev <= 0:
            return math.inf
        r_prev, r_last = grid.nodes[-2], grid.nodes[-1]
        slope = (
            math.log(f_last / f_prev) + (grid.n - 1) * math.log(r_last / r_prev)
        ) / (r_last - r_prev)
        if slope >= 0:
            return math.inf
        return grid.constants.omega_nm1 * f_last * r_last ** (grid.n - 1) / -slope


@dataclass(frozen=True)
class RadialIntegral:
    """Quadrature value (tail estimate included) and the tail estimate on its own."""

    value: float
    tail: float

    @property
    def truncated(self) -> float:
        return self.value - self.tail

    def __float__(self) -> float:
        return self.value


def _node_values(grid: RadialGrid, f: Union[RadialFunction, np.ndarray]) -> np.ndarray:
    if isinstance(f, RadialFunction):
        if not grid.same_as(f.grid):
            raise ValueError("RadialFunction lives on a different grid")
        return f.values
    values = np.asarray(f, dtype=float)
    if values.shape != grid.nodes.shape:
        raise ValueError(f"Expected {grid.nodes.shape[0]} node values, got shape {values.shape}")
    return values


def integrate_radial(
    grid: RadialGrid, f: Union[RadialFunction, np.ndarray], tail: TailModel = None
) -> RadialIntegral:
    """
    Full-space integral of a radial function, plus an optional tail estimate.

    Parameters:
    -----------
    grid: RadialGrid
        Quadrature grid.
    f: RadialFunction or np.ndarray
        The integrand, sampled on the grid nodes.
    tail: TailModel
        Optional decay descriptor bounding the contribution of |y| > r_max.

    """
    values = _node_values(grid, f)
    if np.any(np.isnan(values)):
        raise ValueError("Cannot integrate a profile containing NaN values")
    bulk = float(np.dot(grid.measure, values))
    tail_bound = 0.0 if tail is None else float(tail.bound(grid, values))
    return RadialIntegral(value=bulk + tail_bound, tail=tail_bound)


def log_mass(grid: RadialGrid, log_values: np.ndarray) -> float:
    """log of the grid integral of exp(log_values), without overflow."""
    log_values = np.asarray(log_values, dtype=float)
    if np.any(np.isnan(log_values)):
        raise ValueError("Cannot integrate a log-profile containing NaN values")
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(log_values, b=grid.measure))


def fd_weights(z: float, x: np.ndarray, order: int) -> np.ndarray:
    """
    Finite-difference weights on arbitrary nodes (Fornberg's recursion).

    Returns c with c[k, j] the weight of f(x[j]) in the k-th derivative at z, k <= order.

    """
    x = np.asarray(x, dtype=float)
    c = np.zeros((order + 1, x.size))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, x.size):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _check_stencil_support(grid: RadialGrid):
    if grid.nodes.size < STENCIL_SIZE:
        raise ValueError(f"Finite differences need at least {STENCIL_SIZE} nodes")


def radial_derivative(f: RadialFunction) -> RadialFunction:
    """d/dr of a radial profile, zero at the origin."""
    _check_stencil_support(f.grid)
    indices, first, _ = f.grid.fd_stencils
    return f.with_values(np.sum(first * f.values[indices], axis=1))


def radial_laplacian(f: RadialFunction) -> RadialFunction:
    """
    Radial Laplacian f'' + (n-1) f'/r, equal to n f''(0) at the origin.

    """
    _check_stencil_support(f.grid)
    grid = f.grid
    indices, first, second = grid.fd_stencils
    stencil_values = f.values[indices]
    d1 = np.sum(first * stencil_values, axis=1)
    d2 = np.sum(second * stencil_values, axis=1)
    lap = np.empty_like(d2)
    lap[0] = grid.n * d2[0]
    lap[1:] = d2[1:] + (grid.n - 1) * d1[1:] / grid.nodes[1:]
    return f.with_values(lap)


def integrate_laplacian(lap: RadialFunction) -> RadialFunction:
    """
    Rebuild f - f(0) from its Laplacian through the flux form

        f(xi) - f(0) = int_0^xi r^{1-n} int_0^r lap(s) s^{n-1} ds dr.

    """
    grid = lap.grid
    r = grid.nodes
    inner = integrate.cumulative_simpson(lap.values * r ** (grid.n - 1), x=r, initial=0.0)
    flux = np.zeros_like(r)
    flux[1:] = inner[1:] / r[1:] ** (grid.n - 1)
    return lap.with_values(integrate.cumulative_simpson(flux, x=r, initial=0.0))


def write_columns(path: str, columns: dict):
    """Write equal-length columns as CSV, floats with 17 significant digits."""
    names = list(columns)
    data = [np.asarray(columns[name]) for name in names]
    length = {len(column) for column in data}
    if len(length) > 1:
        raise ValueError(f"Columns have different lengths: {sorted(length)}")

    def fmt(value):
        if isinstance(value, (float, np.floating)):
            return format(float(value), ".17g")
        return str(value)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([fmt(value) for value in row])
    logging.debug(f"Wrote {len(names)} columns to {path}")
