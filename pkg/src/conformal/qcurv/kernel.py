"""
Ring-averaged logarithmic kernel and the discrete potential operator.

For |x| = r the mean of log(1/|x - y|) over the sphere |y| = s is

    k_n(r, s) = -log max(r, s) - (1/Z_n) int_0^pi 1/2 log((1-rho)^2 + 4 rho sin^2(theta/2))
                                                  sin^{n-2}(theta) dtheta,

with rho = min(r, s) / max(r, s) and Z_n the integral of sin^{n-2} over [0, pi].
The potential (1/gamma_n) int log(1/|x-y|) f(y) dy of a radial density is then a
matrix acting on node values.

"""

import logging
import os

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from scipy import special
from tqdm import tqdm

from .config import (
    ASSEMBLY_PAIR_CHUNK,
    DIAGONAL_SUBDIVISION,
    KERNEL_CACHE_MAGIC,
    THETA_MIN_SCALE,
    THETA_PANEL_ORDER,
    THETA_PANELS,
)
from .constants import DimensionalConstants
from .radial import RadialFunction, RadialGrid


SMALL_RHO_SERIES = 1e-3
CACHE_HEADER_DTYPE = np.dtype(
    [("magic", "S8"), ("n", "<i8"), ("size", "<i8"), ("r_max", "<f8"), ("grading", "<f8")]
)


def _mean_log_closed_form(rho: np.ndarray) -> np.ndarray:
    """Mean of 1/2 log((1-rho)^2 + 4 rho sin^2(theta/2)) for n = 3, in closed form."""
    rho = np.asarray(rho, dtype=float)
    out = np.empty_like(rho)
    small = rho < SMALL_RHO_SERIES
    out[small] = rho[small] ** 2 / 6 + rho[small] ** 4 / 60

    p = rho[~small]
    below_one = p < 1
    q = np.where(below_one, p, 0.0)
    plus = (1 + p) ** 2 * np.log1p(p)
    minus = np.where(below_one, (1 - p) ** 2 * np.log1p(-q), 0.0)
    out[~small] = (plus - minus) / (4 * p) - 0.5
    return out


def _mean_log_quadrature(
    n: int,
    rho: np.ndarray,
    panels: int = THETA_PANELS,
    order: int = THETA_PANEL_ORDER,
) -> np.ndarray:
    """
    Same mean for any n >= 3 by composite Gauss-Legendre quadrature in theta.

    One panel covers [0, delta] and the remaining panels grow geometrically from
    delta to pi, where delta = 1 - rho is the scale of the near-singularity at theta = 0.

    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    x, w = special.roots_legendre(order)
    u = (x + 1) / 2
    wu = w / 2

    delta = np.clip(1 - rho, THETA_MIN_SCALE, np.pi)[:, None]
    fractions = np.arange(panels + 1) / panels
    edges = np.concatenate(
        [np.zeros_like(delta), delta * (np.pi / delta) ** fractions[None, :]], axis=1
    )
    start = edges[:, :-1, None]
    length = (edges[:, 1:] - edges[:, :-1])[..., None]
    theta = start + length * u
    weight = length * wu

    r3 = rho[:, None, None]
    log_distance = 0.5 * np.log((1 - r3) ** 2 + 4 * r3 * np.sin(theta / 2) ** 2)
    integrand = log_distance * np.sin(theta) ** (n - 2)
    normalizer = DimensionalConstants.for_dimension(n).sphere_ratio
    return np.sum(weight * integrand, axis=(1, 2)) / normalizer


def ring_kernel(n: int, r, s, method: str = "auto"):
    """
    Mean of log(1/|x - y|) over the sphere |y| = s, for |x| = r.

    Parameters:
    -----------
    n: int
        Dimension (>= 3).
    r, s: float or np.ndarray
        Radii (>= 0, not both zero).
    method: str
        "closed" (n = 3 only), "quadrature", or "auto" (closed form when n = 3).

    """
    DimensionalConstants.for_dimension(n)
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    if np.any(r < 0) or np.any(s < 0):
        raise ValueError("Ring kernel radii must be non-negative")
    big = np.maximum(r, s)
    if np.any(big == 0):
        raise ValueError("Ring kernel is singular at r = s = 0")
    rho = np.minimum(r, s) / big

    if method == "auto":
        method = "closed" if n == 3 else "quadrature"
    if method == "closed":
        if n != 3:
            raise ValueError(f"Closed-form ring kernel is only available for n = 3, got n = {n}")
        mean_log = _mean_log_closed_form(rho.ravel())
    elif method == "quadrature":
        mean_log = _mean_log_quadrature(n, rho.ravel())
    else:
        raise ValueError(f"Unknown ring kernel method {method}")

    out = -(np.log(big) + mean_log.reshape(big.shape))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """
    Discrete logarithmic potential on a grid.

    matrix[i, j] = (omega_{n-1} / gamma_n) w_j k_n(r_i, s_j) s_j^{n-1}, with the two
    cells touching the diagonal refined; lap0_weights realizes the Laplacian of the
    potential at the origin.

    """

    grid: RadialGrid
    matrix: np.ndarray
    lap0_weights: np.ndarray

    @property
    def gamma_n(self) -> float:
        return self.grid.constants.gamma_n

    def apply(self, density) -> RadialFunction:
        return apply(self, density)

    def lap0(self, density) -> float:
        values = _density_values(self, density)
        return float(np.dot(self.lap0_weights, values))


def _density_values(op: KernelOperator, density: Union[RadialFunction, np.ndarray]):
    if isinstance(density, RadialFunction):
        if not op.grid.same_as(density.grid):
            raise ValueError("Density and kernel operator live on different grids")
        values = density.values
    else:
        values = np.asarray(density, dtype=float)
        if values.shape != op.grid.nodes.shape:
            raise ValueError(
                f"Expected {op.grid.nodes.shape[0]} density values, got shape {values.shape}"
            )
    if not np.all(np.isfinite(values)):
        raise ValueError("Density must be finite")
    if np.any(values < 0):
        raise ValueError("Density must be non-negative")
    return values


def apply(op: KernelOperator, density: Union[RadialFunction, np.ndarray]) -> RadialFunction:
    """Potential (1/gamma_n) int log(1/|x-y|) f(y) dy of a radial density, at every node."""
    values = _density_values(op, density)
    return RadialFunction(op.grid, op.matrix @ values)


def _lap0_weights(grid: RadialGrid) -> np.ndarray:
    # Ring average of Delta_x log(1/|x-y|) at x = 0 is -(n-2)/s^2
    consts = grid.constants
    n = grid.n
    return -((n - 2) / consts.gamma_n) * consts.omega_nm1 * grid.weights * grid.nodes ** (n - 3)


def _kernel_values(grid: RadialGrid, progress: bool) -> np.ndarray:
    """Symmetric matrix of k_n(r_i, r_j); the (0, 0) entry carries zero weight and is left at 0."""
    n = grid.n
    r = grid.nodes
    size = r.size
    rows, cols = np.triu_indices(size)
    keep = cols > 0
    rows, cols = rows[keep], cols[keep]

    values = np.zeros((size, size))
    chunks = range(0, rows.size, ASSEMBLY_PAIR_CHUNK)
    with tqdm(
        total=len(chunks), desc=f"Assembling n={n} kernel", ncols=150, disable=not progress
    ) as pbar:
        for start in chunks:
            i = rows[start : start + ASSEMBLY_PAIR_CHUNK]
            j = cols[start : start + ASSEMBLY_PAIR_CHUNK]
            k = ring_kernel(n, r[i], r[j])
            values[i, j] = k
            values[j, i] = k
            pbar.update(1)
    return values


def _diagonal_correction(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Corrections for the two cells touching r_i = s_j, for rows 4..M-4.

    On each cell the kernel is sampled at DIAGONAL_SUBDIVISION sub-cells while the
    density is represented by the cubic through the four surrounding nodes (in the
    uniform variable tau). The plain trapezoid contribution of the cell is removed.

    Returns (row indices, column indices, increments) before the omega/gamma factor.

    """
    n, m = grid.n, grid.size
    r_max, g = grid.r_max, grid.grading
    h = 1.0 / m
    sub = DIAGONAL_SUBDIVISION

    # Interior weights are c * h * dr/dtau; recover the calibration factor c
    mid = m // 2
    calibration = grid.weights[mid] / (h * r_max * g * (mid * h) ** (g - 1))

    x = np.arange(sub + 1) / sub
    trapezoid = np.full(sub + 1, 1.0)
    trapezoid[[0, -1]] = 0.5
    lagrange = np.stack(
        [
            -x * (x - 1) * (x - 2) / 6,
            (x + 1) * (x - 1) * (x - 2) / 2,
            -(x + 1) * x * (x - 2) / 2,
            (x + 1) * x * (x - 1) / 6,
        ]
    )

    row_list, col_list, inc_list = [], [], []
    rows = np.arange(4, m - 3)
    for offset in (-1, 0):
        a = rows + offset
        tau = (a[:, None] + x[None, :]) * h
        s = r_max * tau**g
        jacobian = r_max * g * tau ** (g - 1)
        kern = ring_kernel(n, np.broadcast_to(grid.nodes[rows, None], s.shape), s)
        integrand = kern * s ** (n - 1) * jacobian

        refined = calibration * (h / sub) * (integrand * trapezoid) @ lagrange.T
        for local in range(4):
            row_list.append(rows)
            col_list.append(a - 1 + local)
            inc_list.append(refined[:, local])
        row_list += [rows, rows]
        col_list += [a, a + 1]
        inc_list += [
            -calibration * (h / 2) * integrand[:, 0],
            -calibration * (h / 2) * integrand[:, -1],
        ]
    return np.concatenate(row_list), np.concatenate(col_list), np.concatenate(inc_list)


def assemble(grid: RadialGrid, progress: bool = False) -> KernelOperator:
    """
    Assemble the discrete potential operator of a grid.

    Parameters:
    -----------
    grid: RadialGrid
        Grid whose nodes serve both as evaluation points and as quadrature nodes.
    progress: bool
        Show a tqdm progress bar during assembly.

    """
    consts = grid.constants
    n = grid.n
    logging.info(f"Assembling kernel operator (n={n}, M={grid.size}, R={grid.r_max})")

    kern = _kernel_values(grid, progress)
    scale = consts.omega_nm1 / consts.gamma_n
    matrix = scale * kern * (grid.weights * grid.nodes ** (n - 1))[None, :]

    rows, cols, increments = _diagonal_correction(grid)
    np.add.at(matrix, (rows, cols), scale * increments)

    logging.info("Kernel operator assembled")
    return KernelOperator(grid=grid, matrix=matrix, lap0_weights=_lap0_weights(grid))


def save_kernel(op: KernelOperator, path: str):
    """Binary dump: a little-endian header (magic, n, M, R_max, grading) then row-major float64."""
    grid = op.grid
    header = np.array(
        [(KERNEL_CACHE_MAGIC, grid.n, grid.size, grid.r_max, grid.grading)],
        dtype=CACHE_HEADER_DTYPE,
    )
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        header.tofile(f)
        np.ascontiguousarray(op.matrix, dtype="<f8").tofile(f)
    logging.info(f"Saved kernel operator to {path}")


def load_kernel(path: str, grid: RadialGrid) -> Optional[KernelOperator]:
    """Load a dumped operator; returns None when the file is absent or keyed to another grid."""
    if not os.path.exists(path):
        return None

    with open(path, "rb") as f:
        header = np.fromfile(f, dtype=CACHE_HEADER_DTYPE, count=1)
        if header.size != 1 or header["magic"][0] != KERNEL_CACHE_MAGIC:
            logging.warning(f"{path} is not a kernel cache file, ignoring it")
            return None
        key = (
            int(header["n"][0]),
            int(header["size"][0]),
            float(header["r_max"][0]),
            float(header["grading"][0]),
        )
        if key != grid.key:
            logging.warning(f"Kernel cache {path} was built for {key}, not {grid.key}")
            return None
        count = (grid.size + 1) ** 2
        matrix = np.fromfile(f, dtype="<f8", count=count)

    if matrix.size != count:
        logging.warning(f"Kernel cache {path} is truncated, ignoring it")
        return None

    logging.info(f"Loaded kernel operator from {path}")
    return KernelOperator(
        grid=grid,
        matrix=matrix.astype(float).reshape(grid.size + 1, grid.size + 1),
        lap0_weights=_lap0_weights(grid),
    )


def load_or_assemble(
    grid: RadialGrid, cache_path: Optional[str] = None, progress: bool = False
) -> KernelOperator:
    if cache_path:
        op = load_kernel(cache_path, grid)
        if op is not None:
            return op
    op = assemble(grid, progress=progress)
    if cache_path:
        save_kernel(op, cache_path)
    return op
