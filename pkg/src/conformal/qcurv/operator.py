"""
The fixed-point map T for radial prescribed Q-curvature.

Two variants are provided:

    THM1 (n >= 5):  K = Q e^{nP} e^{nP_v},  P_v = -(1 + A_v) r^4,
                    T(v) = (1/gamma_n) int log(1/|x-y|) K e^{n(v + c_v)} dy
                           + (1/2n) (r^2 - r^4) |Delta v(0)|
    THM2 (n >= 3):  K = Q,
                    T(v) = (1/gamma_n) int log(1/|x-y|) Q e^{n(v + c_v)} dy
                           + (1/2n) r^2 |Delta v(0)|

where c_v normalizes the total curvature int K e^{n(v + c_v)} to kappa. The value of
Delta v(0) is carried along analytically instead of being differentiated.

"""

import math

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from scipy import interpolate

from .config import (
    AV_THRESHOLD_RADIUS,
    THM1_LOG_SUP_LIMIT,
    THM2_ADMISSIBILITY_RATES,
    THM2_TAIL_RELATIVE_LIMIT,
)
from .constants import DimensionalConstants
from .kernel import KernelOperator
from .radial import (
    GaussianEnvelopeTail,
    LogSlopeTail,
    RadialFunction,
    RadialGrid,
    log_mass,
)


VARIANTS = ("THM1", "THM2")
PROFILE_KINDS = ("constant", "gaussian", "quartic", "tabulated")
MAX_LOG_DENSITY = 709.0  # exp overflows a double just above this


class NormalizationError(RuntimeError):
    """The total curvature of the candidate vanishes or is not finite."""


class BlowUpError(RuntimeError):
    """The density e^{n(v + c_v)} is no longer finite."""


class AdmissibilityError(RuntimeError):
    """The density is not integrable on the grid (tail bound too large)."""


@dataclass(frozen=True)
class CurvatureProfile:
    """
    Radial curvature function Q.

    constant:  Q = amplitude
    gaussian:  Q = amplitude e^{-rate r^2}
    quartic:   Q = amplitude e^{-rate r^4}
    tabulated: monotone cubic through (table_r, table_q), zero beyond the table

    """

    kind: str
    amplitude: float = 1.0
    rate: float = 0.0
    table_r: tuple = ()
    table_q: tuple = ()

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(
                f"Unknown curvature profile kind {self.kind}, expected {PROFILE_KINDS}"
            )
        if self.kind == "tabulated":
            r = np.asarray(self.table_r, dtype=float)
            q = np.asarray(self.table_q, dtype=float)
            if r.ndim != 1 or r.size < 2 or r.shape != q.shape:
                raise ValueError(
                    "Tabulated profile needs matching table_r and table_q of length >= 2"
                )
            if r[0] != 0 or np.any(np.diff(r) <= 0):
                raise ValueError("table_r must start at 0 and be strictly increasing")
            if np.any(q < 0) or not np.all(np.isfinite(q)):
                raise ValueError("Tabulated Q must be finite and non-negative")
            object.__setattr__(self, "table_r", tuple(float(x) for x in r))
            object.__setattr__(self, "table_q", tuple(float(x) for x in q))
        else:
            if not math.isfinite(self.amplitude) or self.amplitude < 0:
                raise ValueError(f"Profile amplitude must be finite and >= 0, got {self.amplitude}")
            if not math.isfinite(self.rate) or self.rate < 0:
                raise ValueError(f"Profile rate must be finite and >= 0, got {self.rate}")

    @classmethod
    def constant(cls, value: float) -> "CurvatureProfile":
        return cls("constant", amplitude=value)

    @classmethod
    def gaussian(cls, delta: float, rate: float) -> "CurvatureProfile":
        return cls("gaussian", amplitude=delta, rate=rate)

    @classmethod
    def quartic(cls, delta: float, rate: float) -> "CurvatureProfile":
        return cls("quartic", amplitude=delta, rate=rate)

    @classmethod
    def tabulated(cls, table_r, table_q) -> "CurvatureProfile":
        return cls("tabulated", table_r=tuple(table_r), table_q=tuple(table_q))

    def _table(self) -> interpolate.PchipInterpolator:
        return interpolate.PchipInterpolator(self.table_r, self.table_q, extrapolate=False)

    def log_values(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        with np.errstate(divide="ignore"):
            if self.kind == "tabulated":
                q = np.nan_to_num(self._table()(r), nan=0.0)
                return np.log(np.maximum(q, 0.0))
            log_amplitude = np.log(self.amplitude)
        if self.kind == "constant":
            return np.full_like(r, log_amplitude)
        if self.kind == "gaussian":
            return log_amplitude - self.rate * r**2
        return log_amplitude - self.rate * r**4

    def values(self, r) -> np.ndarray:
        return np.exp(self.log_values(r))

    def log_derivative(self, r) -> np.ndarray:
        """d/dr log Q, set to 0 where Q vanishes."""
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "constant":
            return np.zeros_like(r)
        if self.kind == "gaussian":
            return -2 * self.rate * r
        if self.kind == "quartic":
            return -4 * self.rate * r**3
        table = self._table()
        q = np.nan_to_num(table(r), nan=0.0)
        dq = np.nan_to_num(table.derivative()(r), nan=0.0)
        out = np.zeros_like(r)
        positive = q > 0
        out[positive] = dq[positive] / q[positive]
        return out

    def to_dict(self) -> dict:
        if self.kind == "tabulated":
            return {"kind": self.kind, "table_r": list(self.table_r), "table_q": list(self.table_q)}
        return {"kind": self.kind, "amplitude": self.amplitude, "rate": self.rate}

    @classmethod
    def from_dict(cls, data: dict) -> "CurvatureProfile":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise ValueError("Curvature profile needs a 'kind'")
        if kind == "tabulated":
            return cls.tabulated(data.pop("table_r", ()), data.pop("table_q", ()))
        unknown = set(data) - {"amplitude", "rate"}
        if unknown:
            raise ValueError(f"Unknown curvature profile fields {sorted(unknown)}")
        return cls(
            kind, amplitude=float(data.get("amplitude", 1.0)), rate=float(data.get("rate", 0.0))
        )


def _tail_within_limit(tail: float, log_total: float) -> bool:
    """tail <= THM2_TAIL_RELATIVE_LIMIT * e^{log_total}, compared in log space."""
    if not math.isfinite(log_total) or math.isnan(tail):
        return False
    if tail <= 0:
        return True
    if math.isinf(tail):
        return False
    return math.log(tail) <= math.log(THM2_TAIL_RELATIVE_LIMIT) + log_total


@dataclass(frozen=True)
class ProblemSpec:
    """
    Full statement of one radial solve.

    Parameters:
    -----------
    n: int
        Dimension, >= 3 (>= 5 for THM1).
    kappa: float
        Target total curvature int Q e^{nu} dx.
    q: CurvatureProfile
        Radial curvature function, Q(0) > 0.
    p_coeffs: tuple
        Coefficients a_j of P(r) = sum_j a_j r^{2j}, with 2j <= n - 1 (THM1 only).
    variant: str
        "THM1" or "THM2".

    """

    n: int
    kappa: float
    q: CurvatureProfile
    p_coeffs: tuple = ()
    variant: str = "THM1"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"Dimension must be an integer >= 3, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.variant not in VARIANTS:
            raise ValueError(f"Unknown variant {self.variant}, expected one of {VARIANTS}")
        if self.variant == "THM1" and self.n < 5:
            raise ValueError(f"THM1 requires n >= 5, got n = {self.n}")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")
        if not float(self.q.values(0.0)) > 0:
            raise ValueError("Curvature profile must satisfy Q(0) > 0")
        coeffs = tuple(float(a) for a in self.p_coeffs)
        if 2 * (len(coeffs) - 1) > self.n - 1:
            raise ValueError(
                f"P has degree {2 * (len(coeffs) - 1)}, above n - 1 = {self.n - 1}"
            )
        if self.variant == "THM2" and any(a != 0 for a in coeffs):
            raise ValueError("THM2 takes K = Q; the polynomial P must be empty")
        object.__setattr__(self, "p_coeffs", coeffs)

    @property
    def constants(self) -> DimensionalConstants:
        return DimensionalConstants.for_dimension(self.n)

    def polynomial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for j, a in enumerate(self.p_coeffs):
            out = out + a * r ** (2 * j)
        return out

    def log_qp(self, r) -> np.ndarray:
        """log(Q e^{nP}) on the given radii."""
        return self.q.log_values(r) + self.n * self.polynomial(r)

    def check_admissibility(self, grid: RadialGrid) -> dict:
        """
        Numerical proxies of the growth hypotheses.

        THM1: sup over the grid of Q e^{nP} must be finite.
        THM2: Q e^{lambda r^2} is tested for grid-integrability at a few rates.

        """
        r = grid.nodes
        q = self.q.values(r)
        if np.any(q < 0):
            raise ValueError("Curvature profile takes negative values on the grid")

        if self.variant == "THM1":
            log_sup = float(np.max(self.log_qp(r)))
            return {"log_sup_qp": log_sup, "bounded": bool(log_sup < THM1_LOG_SUP_LIMIT)}

        flags = {}
        log_q = self.q.log_values(r)
        for rate in THM2_ADMISSIBILITY_RATES:
            log_f = log_q + rate * r**2
            with np.errstate(over="ignore"):
                values = np.exp(log_f)
            mass = log_mass(grid, log_f)
            tail = LogSlopeTail().bound(grid, values) if np.all(np.isfinite(values)) else math.inf
            flags[f"rate_{rate:g}"] = _tail_within_limit(tail, mass)
        return flags

    def validate(self, grid: RadialGrid) -> dict:
        """Admissibility flags on a grid; the remaining hypotheses are checked at construction."""
        return self.check_admissibility(grid)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "kappa": self.kappa,
            "variant": self.variant,
            "p_coeffs": list(self.p_coeffs),
            "q": self.q.to_dict(),
        }


@dataclass(frozen=True)
class IterationState:
    """
    Current iterate and its derived data.

    c_v is the normalization of v against kappa_current and d0 the value of
    Delta v(0) carried by the iteration.

    """

    v: RadialFunction
    c_v: float
    A_v: float
    d0: float
    t: float = 1.0
    kappa_current: float = math.nan
    residual: float = math.inf
    converged: bool = False

    @property
    def w(self) -> np.ndarray:
        """w = v + c_v + (1/n) log t."""
        return self.v.values + self.c_v + math.log(self.t) / self.v.grid.n


@dataclass(frozen=True)
class OperatorImage:
    """T(v) together with the data computed on the way."""

    potential: RadialFunction
    d0: float
    c_v: float
    A_v: float
    log_density: np.ndarray = field(repr=False)
    tail_bound: float

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)


def compute_cv(
    spec: ProblemSpec, v: RadialFunction, log_k: np.ndarray, kappa: Optional[float] = None
) -> float:
    """
    Normalization constant (1/n) log(kappa / int K e^{nv} dx).

    Parameters:
    -----------
    spec: ProblemSpec
        Problem statement (dimension and default target).
    v: RadialFunction
        Current profile.
    log_k: np.ndarray
        log K on the grid nodes.
    kappa: float
        Target total curvature, spec.kappa when omitted.

    """
    kappa = spec.kappa if kappa is None else kappa
    n = spec.n
    log_total = log_mass(v.grid, np.asarray(log_k) + n * v.values)
    if not math.isfinite(log_total):
        raise NormalizationError(
            f"Total curvature of the candidate is not usable (log = {log_total})"
        )
    c_v = (math.log(kappa) - log_total) / n
    if not math.isfinite(c_v):
        raise NormalizationError(f"Normalization constant is not finite ({c_v})")
    return c_v


def compute_Av(v: RadialFunction, threshold: float = AV_THRESHOLD_RADIUS) -> float:
    """max(0, max over nodes r_j >= threshold of (v(r_j) - v(0)) / r_j^4)."""
    grid = v.grid
    if grid.r_max <= threshold:
        raise ValueError(f"A_v needs a grid beyond r = {threshold}, got r_max = {grid.r_max}")
    far = grid.nodes >= threshold
    quotient = (v.values[far] - v.values[0]) / grid.nodes[far] ** 4
    return max(0.0, float(np.max(quotient)))


def thm1_coefficients(state: IterationState) -> tuple[float, float]:
    """Coefficients of u = -(2 kappa / Lambda_1) log r + P + c1 r^2 - c2 r^4 + o(1)."""
    n = state.v.grid.n
    c1 = state.t * abs(state.d0) / (2 * n)
    return c1, 1 + state.A_v + c1


def _finish(
    kernel: KernelOperator,
    log_density: np.ndarray,
    correction: np.ndarray,
    d0_in: float,
) -> tuple[RadialFunction, float, np.ndarray]:
    if np.any(np.isnan(log_density)) or np.any(log_density >= MAX_LOG_DENSITY):
        raise BlowUpError("Density K e^{n(v + c_v)} is not finite")
    density = np.exp(log_density)
    potential = kernel.apply(density)
    potential = potential.with_values(potential.values + correction)
    # Delta of the correction at the origin is 2n * (1/2n) |d0|
    d0_out = kernel.lap0(density) + abs(d0_in)
    return potential, d0_out, density


def apply_T_thm1(
    spec: ProblemSpec, state: IterationState, kernel: KernelOperator
) -> OperatorImage:
    """T of the THM1 variant; see the module docstring."""
    if spec.variant != "THM1":
        raise ValueError(f"apply_T_thm1 called for a {spec.variant} problem")
    grid = kernel.grid
    r = grid.nodes
    n = spec.n
    kappa = _target(spec, state)

    A_v = compute_Av(state.v)
    log_qp = spec.log_qp(r)
    log_k = log_qp - n * (1 + A_v) * r**4
    c_v = compute_cv(spec, state.v, log_k, kappa)
    log_density = log_k + n * (state.v.values + c_v)

    correction = (r**2 - r**4) * abs(state.d0) / (2 * n)
    potential, d0_out, _ = _finish(kernel, log_density, correction, state.d0)

    # Envelope sup(Q e^{nP}) e^{n(v(0) + c_v)} e^{-n r^4}
    envelope = GaussianEnvelopeTail(
        log_amplitude=float(np.max(log_qp)) + n * (state.v.values[0] + c_v), rate=n, power=4
    )
    tail = envelope.bound(grid, None)
    return OperatorImage(potential, d0_out, c_v, A_v, log_density, tail)


def apply_T_thm2(
    spec: ProblemSpec, state: IterationState, kernel: KernelOperator
) -> OperatorImage:
    """T of the THM2 variant; see the module docstring."""
    if spec.variant != "THM2":
        raise ValueError(f"apply_T_thm2 called for a {spec.variant} problem")
    grid = kernel.grid
    r = grid.nodes
    n = spec.n
    kappa = _target(spec, state)

    A_v = compute_Av(state.v)
    log_k = spec.q.log_values(r)
    c_v = compute_cv(spec, state.v, log_k, kappa)
    log_density = log_k + n * (state.v.values + c_v)

    correction = r**2 * abs(state.d0) / (2 * n)
    potential, d0_out, density = _finish(kernel, log_density, correction, state.d0)

    tail = LogSlopeTail().bound(grid, density)
    if tail > THM2_TAIL_RELATIVE_LIMIT * kappa:
        raise AdmissibilityError(
            f"Density tail beyond r_max={grid.r_max} is bounded by {tail:.3e} > "
            f"{THM2_TAIL_RELATIVE_LIMIT:g} * kappa"
        )
    return OperatorImage(potential, d0_out, c_v, A_v, log_density, tail)


def apply_T(spec: ProblemSpec, state: IterationState, kernel: KernelOperator) -> OperatorImage:
    if spec.variant == "THM1":
        return apply_T_thm1(spec, state, kernel)
    return apply_T_thm2(spec, state, kernel)


def _target(spec: ProblemSpec, state: IterationState) -> float:
    return spec.kappa if math.isnan(state.kappa_current) else state.kappa_current


def initial_state(
    spec: ProblemSpec, kernel: KernelOperator, t: float = 1.0, kappa: Optional[float] = None
) -> IterationState:
    """v = 0, d0 = 0, normalized against kappa (spec.kappa when omitted)."""
    grid = kernel.grid
    v = RadialFunction(grid, np.zeros_like(grid.nodes))
    kappa = spec.kappa if kappa is None else kappa
    log_k = spec.log_qp(grid.nodes) if spec.variant == "THM1" else spec.q.log_values(grid.nodes)
    if spec.variant == "THM1":
        log_k = log_k - spec.n * grid.nodes**4
    return IterationState(
        v=v, c_v=compute_cv(spec, v, log_k, kappa), A_v=0.0, d0=0.0, t=t, kappa_current=kappa
    )
