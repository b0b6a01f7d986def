"""
Dimensional constants of the radial Q-curvature problem.

Gamma values at integer and half-integer arguments are evaluated by exact
recursion so that sphere measures, the round-sphere total curvature and the
kernel normalization carry no error beyond floating-point rounding.

"""

import math

from dataclasses import dataclass
from functools import lru_cache

from scipy import special


def half_integer_gamma(x: float) -> float:
    """
    Exact Gamma function on the positive half-integers.

    Parameters:
    -----------
    x: float
        A positive multiple of 1/2.

    Returns:
    --------
    Gamma(x), computed as (m-1)! for x = m and (2m)! sqrt(pi) / (4^m m!) for x = m + 1/2.

    """
    twice = round(2 * x)
    if x <= 0 or not math.isclose(2 * x, twice, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError(f"half_integer_gamma expects a positive multiple of 1/2, got {x}")

    if twice % 2 == 0:
        return float(math.factorial(twice // 2 - 1))

    m = (twice - 1) // 2
    # Integer true division rounds the exact rational once
    return math.factorial(2 * m) / (4**m * math.factorial(m)) * math.sqrt(math.pi)


def gamma(x: float) -> float:
    """Gamma function, exact on half-integers and scipy elsewhere."""
    if x > 0 and math.isclose(2 * x, round(2 * x), rel_tol=0.0, abs_tol=1e-12):
        return half_integer_gamma(x)
    return float(special.gamma(x))


def sphere_area(k: int) -> float:
    """
    Measure of the unit sphere S^k in R^{k+1}: 2 pi^{(k+1)/2} / Gamma((k+1)/2).

    """
    if int(k) != k or k < 1:
        raise ValueError(f"sphere_area is defined for integer k >= 1, got {k}")
    return 2 * math.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


def lambda1(n: int) -> float:
    """Total curvature of the round sphere S^n, (n-1)! |S^n|."""
    if int(n) != n or n < 3:
        raise ValueError(f"Dimension must be an integer >= 3, got {n}")
    return math.factorial(n - 1) * sphere_area(n)


def gamma_n(n: int) -> float:
    """Normalization of the logarithmic kernel, half of lambda1(n)."""
    return lambda1(n) / 2


@dataclass(frozen=True)
class DimensionalConstants:
    """
    Constants shared by every module for a fixed dimension n.

    sphere_ratio is the integral of sin^{n-2} over [0, pi], i.e. |S^{n-1}| / |S^{n-2}|,
    the exact normalizer of the ring-averaged kernel.

    """

    n: int
    sphere_area_n: float
    omega_nm1: float
    lambda1: float
    gamma_n: float
    factorial_nm1: int
    sphere_ratio: float

    @classmethod
    def for_dimension(cls, n: int) -> "DimensionalConstants":
        """Cached constructor; every call with the same n returns the same object."""
        if int(n) != n:
            raise ValueError(f"Dimension must be an integer >= 3, got {n}")
        return _constants_for_dimension(int(n))


@lru_cache(maxsize=None)
def _constants_for_dimension(n: int) -> DimensionalConstants:
    lam = lambda1(n)
    omega_nm1 = sphere_area(n - 1)
    return DimensionalConstants(
        n=n,
        sphere_area_n=sphere_area(n),
        omega_nm1=omega_nm1,
        lambda1=lam,
        gamma_n=lam / 2,
        factorial_nm1=math.factorial(n - 1),
        sphere_ratio=omega_nm1 / sphere_area(n - 2),
    )
