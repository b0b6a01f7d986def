"""
Independent checks of solver output.

Reference values come from closed forms or from scipy.integrate.quad, never from the
grid weights used by the solver.

"""

import json
import math

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from jsonschema import Draft202012Validator
from scipy import integrate

from .config import (
    ASYMPTOTIC_MIN_NODES,
    ASYMPTOTIC_WINDOW,
    AV_TOL,
    BLOWUP_CORE_RADIUS,
    LAPLACIAN_SLACK,
    NORMALIZATION_TOL,
    ORDERING_SLACK,
    POHOZAEV_TOL,
    REPORT_SCHEMA_PATH,
    REPORT_SCHEMA_VERSION,
    RESIDUAL_TOL,
    SLOPE_RELATIVE_TOL,
    THM2_TAIL_RELATIVE_LIMIT,
    XI_MONOTONE_SLACK,
)
from .constants import DimensionalConstants
from .kernel import KernelOperator
from .operator import (
    AdmissibilityError,
    BlowUpError,
    CurvatureProfile,
    IterationState,
    MAX_LOG_DENSITY,
    NormalizationError,
    ProblemSpec,
    apply_T,
    compute_Av,
    thm1_coefficients,
)
from .radial import (
    PowerTail,
    RadialFunction,
    RadialGrid,
    integrate_radial,
    log_mass,
    radial_derivative,
    radial_laplacian,
)
from .solver import SolveResult, SolverConfig, SolveStatus, solve, update_residual


@dataclass(frozen=True)
class SphericalSolution:
    """u(r) = log(2 lam / (1 + lam^2 r^2)), the round-sphere solution centered at 0."""

    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"Scale must be positive, got {self.lam}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.log(2 * self.lam) - np.log1p((self.lam * r) ** 2)

    def density(self, n: int, r) -> np.ndarray:
        """(n-1)! e^{nu}, whose total mass is Lambda_1."""
        return math.factorial(n - 1) * np.exp(n * self(r))

    @property
    def far_field_constant(self) -> float:
        """Limit of u(r) + 2 log r."""
        return math.log(2 / self.lam)


def reference_radial_integral(n: int, func, lower: float = 0.0, upper: float = math.inf) -> float:
    """omega_{n-1} int_lower^upper f(r) r^{n-1} dr by adaptive quadrature."""
    omega = DimensionalConstants.for_dimension(n).omega_nm1
    breaks = [b for b in (1.0, 10.0) if lower < b < upper]
    edges = [lower, *breaks, upper]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, _ = integrate.quad(
            lambda r: func(r) * r ** (n - 1), a, b, limit=200, epsabs=0.0, epsrel=1e-12
        )
        total += value
    return omega * total


@dataclass(frozen=True)
class SphericalOracleReport:
    n: int
    lam: float
    mass: float
    lambda1: float
    mass_error: float
    c0: float
    c0_reference: float
    potential_deviation: float
    potential_spread: float
    passed: bool


def spherical_oracle(
    n: int, grid: RadialGrid, kernel: KernelOperator, lam: float = 1.0
) -> SphericalOracleReport:
    """
    Mass and potential identities of the spherical density (n-1)! e^{n u_lam}.

    apply(f) + log(1 + lam^2 r^2) must be the constant C0 = (1/gamma_n) int log(1/|y|) f dy
    on r <= r_max / 2, and the mass must be Lambda_1.

    """
    if grid.n != n or kernel.grid.n != n:
        raise ValueError(f"Grid and kernel must be built for n = {n}")
    consts = DimensionalConstants.for_dimension(n)
    sphere = SphericalSolution(lam)
    r = grid.nodes
    f = sphere.density(n, r)

    mass = integrate_radial(grid, f, PowerTail(2 * n)).value
    mass_error = abs(mass - consts.lambda1) / consts.lambda1

    log_inverse = np.zeros_like(r)
    log_inverse[1:] = -np.log(r[1:])
    c0 = integrate_radial(grid, log_inverse * f).value / consts.gamma_n
    c0_reference = (
        reference_radial_integral(n, lambda s: -math.log(s) * float(sphere.density(n, s)))
        / consts.gamma_n
    )

    window = r <= grid.r_max / 2
    shifted = kernel.apply(f).values + np.log1p((lam * r) ** 2)
    deviation = float(np.max(np.abs(shifted[window] - c0)))
    spread = float(np.ptp(shifted[window]))

    return SphericalOracleReport(
        n=n,
        lam=lam,
        mass=mass,
        lambda1=consts.lambda1,
        mass_error=mass_error,
        c0=c0,
        c0_reference=c0_reference,
        potential_deviation=deviation,
        potential_spread=spread,
        passed=bool(
            mass_error <= 1e-6
            and deviation <= 1e-3
            and spread <= 1e-3
            and abs(c0 - c0_reference) <= 1e-3
        ),
    )


@dataclass(frozen=True)
class AsymptoticFit:
    slope: float
    target: float
    drift: float

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.target) / abs(self.target)


def fit_log_slope(
    grid: RadialGrid, values: np.ndarray, window: tuple = ASYMPTOTIC_WINDOW
) -> tuple[float, float]:
    """
    Least-squares fit of values against log r on [window[0] r_max, window[1] r_max].

    Returns the slope and the largest deviation of values - slope log r from its mean.

    """
    r = grid.nodes
    mask = (r >= window[0] * grid.r_max) & (r <= window[1] * grid.r_max)
    if np.count_nonzero(mask) < ASYMPTOTIC_MIN_NODES:
        raise ValueError(
            f"Asymptotic window holds {np.count_nonzero(mask)} nodes, "
            f"need at least {ASYMPTOTIC_MIN_NODES}"
        )
    log_r = np.log(r[mask])
    g = np.asarray(values, dtype=float)[mask]
    slope, _ = np.polyfit(log_r, g, 1)
    remainder = g - slope * log_r
    return float(slope), float(np.max(np.abs(remainder - remainder.mean())))


def depolynomialized_profile(spec: ProblemSpec, state: IterationState) -> np.ndarray:
    """v with the polynomial correction of T removed."""
    r = state.v.grid.nodes
    scale = state.t * abs(state.d0) / (2 * spec.n)
    if spec.variant == "THM1":
        return state.v.values - scale * (r**2 - r**4)
    return state.v.values - scale * r**2


def asymptotic_fit(
    spec: ProblemSpec, profile: Union[IterationState, RadialFunction]
) -> AsymptoticFit:
    """
    Fitted log-slope of a converged profile, against the target -2 t kappa / Lambda_1.

    A RadialFunction is fitted as given (e.g. an assembled solution u).

    """
    lambda1 = spec.constants.lambda1
    if isinstance(profile, IterationState):
        grid = profile.v.grid
        values = depolynomialized_profile(spec, profile)
        kappa = profile.kappa_current if math.isfinite(profile.kappa_current) else spec.kappa
        target = -2 * profile.t * kappa / lambda1
    else:
        grid = profile.grid
        values = profile.values
        target = -2 * spec.kappa / lambda1
    slope, drift = fit_log_slope(grid, values)
    return AsymptoticFit(slope=slope, target=target, drift=drift)


def pohozaev_lhs(kappa: float, gamma_n: float) -> float:
    ratio = kappa / gamma_n
    return ratio * (ratio - 2)


@dataclass(frozen=True)
class PohozaevReport:
    lhs: float
    rhs: float
    residual: float
    sign_nonpositive: bool

    @property
    def obstruction(self) -> bool:
        """Positive left side against a right side that cannot be positive."""
        return self.lhs > 0 and self.sign_nonpositive


def pohozaev_residual(
    spec: ProblemSpec, state: IterationState, kernel: KernelOperator
) -> PohozaevReport:
    """
    Both sides of (k/g)(k/g - 2) = (2 / (n g)) int (x . grad K_poh) e^{n v_poh} dx, g = gamma_n.

    Integrating x . grad f by parts and symmetrizing the kernel of x . grad v_poh gives
    int (x . grad K_poh) e^{n v_poh} = (n k / 2)(k/g - 2), hence the factor 2 / n.

    v_poh = (1/g) int log(|y| / |x - y|) f(y) dy for the final density f = Q e^{nu},
    and K_poh = Q e^{n(u - v_poh)}, so that K_poh e^{n v_poh} = f.

    """
    if spec.n not in (3, 4):
        raise ValueError(f"The Pohozaev check is only available for n in (3, 4), got {spec.n}")
    if spec.variant != "THM2":
        raise ValueError("The Pohozaev check applies to THM2 problems")

    grid = kernel.grid
    consts = grid.constants
    r = grid.nodes
    n = spec.n

    u = state.v.values + state.c_v
    f = np.exp(spec.q.log_values(r) + n * u)
    kappa = state.kappa_current if math.isfinite(state.kappa_current) else spec.kappa

    log_r = np.zeros_like(r)
    log_r[1:] = np.log(r[1:])
    shift = integrate_radial(grid, log_r * f).value / consts.gamma_n
    v_poh = kernel.apply(f).values + shift

    h = RadialFunction(grid, u - v_poh)
    radial_term = r * (spec.q.log_derivative(r) + n * radial_derivative(h).values)
    rhs = 2 * integrate_radial(grid, radial_term * f).value / (n * consts.gamma_n)
    lhs = pohozaev_lhs(kappa, consts.gamma_n)

    support = f > 0
    return PohozaevReport(
        lhs=lhs,
        rhs=rhs,
        residual=abs(lhs - rhs) / (1 + abs(lhs)),
        sign_nonpositive=bool(np.all(radial_term[support] <= 0)),
    )


@dataclass(frozen=True)
class ProbeReport:
    kappa: float
    status: SolveStatus
    pohozaev_lhs: float
    pohozaev_rhs: float
    sign_diagnostic: str
    diagnostics_passed: bool


def nonexistence_probe(
    n: int,
    delta: float,
    rate: float,
    kappa: float,
    kernel: KernelOperator,
    cfg: SolverConfig = None,
) -> ProbeReport:
    """
    Solve with the Gaussian Q = delta e^{-rate r^2} and report the Pohozaev sign mechanism.

    sign_diagnostic is "contradiction" when the left side is positive while
    r d/dr K_poh <= 0 on the support of the final iterate, "consistent" otherwise,
    and "unavailable" when no iterate was produced.

    """
    if n not in (3, 4):
        raise ValueError(f"The nonexistence probe is only available for n in (3, 4), got {n}")
    cfg = SolverConfig() if cfg is None else cfg
    spec = ProblemSpec(
        n=n, kappa=kappa, q=CurvatureProfile.gaussian(delta, rate), variant="THM2"
    )
    result = solve(spec, cfg, kernel)
    lhs = pohozaev_lhs(kappa, spec.constants.gamma_n)

    rhs = math.nan
    sign = "unavailable"
    if result.state is not None:
        try:
            report = pohozaev_residual(spec, result.state, kernel)
        except ValueError:
            report = None
        if report is not None:
            rhs = report.rhs
            sign = "contradiction" if lhs > 0 and report.sign_nonpositive else "consistent"

    passed = False
    if result.converged:
        passed = run_invariant_suite(spec, result, kernel).passed

    return ProbeReport(
        kappa=kappa,
        status=result.status,
        pohozaev_lhs=lhs,
        pohozaev_rhs=rhs,
        sign_diagnostic=sign,
        diagnostics_passed=passed,
    )


@dataclass
class DiagnosticsReport:
    status: str
    normalization_error: Optional[float] = None
    fixed_point_residual: Optional[float] = None
    asymptotic: Optional[dict] = None
    pohozaev: Optional[dict] = None
    laplacian_bound_violations: Optional[int] = None
    tail_bound: Optional[float] = None
    sup_core_w: Optional[float] = None
    total_curvature: Optional[float] = None
    thm1_coefficients: Optional[dict] = None
    admissibility: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    passed: bool = False
    schema_version: str = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return sanitize(asdict(self))


def _log_k(spec: ProblemSpec, r: np.ndarray, A_v: float) -> np.ndarray:
    if spec.variant == "THM1":
        return spec.log_qp(r) - spec.n * (1 + A_v) * r**4
    return spec.q.log_values(r)


def run_invariant_suite(
    spec: ProblemSpec, result: SolveResult, kernel: KernelOperator
) -> DiagnosticsReport:
    """
    Evaluate every runtime invariant on the final state of a solve.

    Failures are reported as flags; nothing is raised for a failing check.

    """
    report = DiagnosticsReport(status=result.status.value)
    grid = kernel.grid
    report.admissibility = spec.check_admissibility(grid)
    state = result.state
    if state is None:
        report.flags = {"converged": False}
        return report

    r = grid.nodes
    n = spec.n
    t = state.t
    kappa = state.kappa_current if math.isfinite(state.kappa_current) else spec.kappa

    # Normalization with the state's own c_v, no refresh
    A_v = compute_Av(state.v)
    log_total = log_mass(grid, _log_k(spec, r, A_v) + n * (state.v.values + state.c_v))
    excess = log_total - math.log(kappa)
    report.normalization_error = abs(math.expm1(excess)) if excess < MAX_LOG_DENSITY else math.inf

    try:
        image = apply_T(spec, state, kernel)
        window = r <= grid.r_max / 2
        report.fixed_point_residual = update_residual(state, image, t, window)[0]
        report.tail_bound = image.tail_bound
    except (BlowUpError, NormalizationError, AdmissibilityError):
        report.fixed_point_residual = math.inf
        report.tail_bound = math.inf

    report.sup_core_w = float(np.max(state.w[r <= BLOWUP_CORE_RADIUS]))

    lap = radial_laplacian(state.v).values
    correction_lap = 2 * n if spec.variant == "THM2" else 2 * n - 4 * (n + 2) * r**2
    bound = t * abs(state.d0) / (2 * n) * correction_lap + LAPLACIAN_SLACK * (1 + r**2)
    report.laplacian_bound_violations = int(np.count_nonzero(lap > bound))

    try:
        fit = asymptotic_fit(spec, state)
        report.asymptotic = {
            "slope": fit.slope,
            "target": fit.target,
            "drift": fit.drift,
            "relative_error": fit.relative_error,
        }
    except ValueError:
        report.asymptotic = None

    if spec.variant == "THM2" and n in (3, 4):
        try:
            poh = pohozaev_residual(spec, state, kernel)
            report.pohozaev = {
                "lhs": poh.lhs,
                "rhs": poh.rhs,
                "residual": poh.residual,
                "sign_nonpositive": poh.sign_nonpositive,
            }
        except ValueError:
            # density of a diverging iterate overflows
            report.pohozaev = {"lhs": None, "rhs": None, "residual": math.inf}

    if spec.variant == "THM1":
        c1, c2 = thm1_coefficients(state)
        report.thm1_coefficients = {"c1": c1, "c2": c2}

    if result.solution is not None:
        u = result.solution.values
        log_f = spec.q.log_values(r) + n * u
        report.total_curvature = math.exp(log_mass(grid, log_f))

    flags = {
        "converged": result.status == SolveStatus.CONVERGED,
        "normalization": report.normalization_error <= NORMALIZATION_TOL,
        "fixed_point_residual": report.fixed_point_residual <= RESIDUAL_TOL,
        "d0_negative": state.d0 < 0,
        "a_v_vanishes": A_v <= AV_TOL if spec.variant == "THM1" else None,
        "laplacian_bound": report.laplacian_bound_violations == 0,
        "tail": report.tail_bound <= THM2_TAIL_RELATIVE_LIMIT * kappa,
        "b1_ordering": None,
        "xi_monotone": None,
        "asymptotic_slope": None,
        "pohozaev": None,
    }
    if spec.variant == "THM1":
        inner = state.v.values[r <= 1]
        outer = state.v.values[r > 1]
        flags["b1_ordering"] = bool(outer.max() <= inner.min() + ORDERING_SLACK)
    else:
        xi = depolynomialized_profile(spec, state)[r <= grid.r_max / 2]
        slack = XI_MONOTONE_SLACK + 2 * report.fixed_point_residual
        flags["xi_monotone"] = bool(np.all(np.diff(xi) <= slack))
    if report.asymptotic is not None:
        flags["asymptotic_slope"] = report.asymptotic["relative_error"] <= SLOPE_RELATIVE_TOL
    if report.pohozaev is not None:
        flags["pohozaev"] = report.pohozaev["residual"] <= POHOZAEV_TOL

    report.flags = {name: None if value is None else bool(value) for name, value in flags.items()}
    report.passed = all(value is not False for value in report.flags.values())
    return report


def sanitize(value):
    """Plain-JSON form: numpy scalars unwrapped, non-finite floats as null, enums by value."""
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [sanitize(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def report_document(config: dict, result: SolveResult, diagnostics: DiagnosticsReport) -> dict:
    """The report.json document: effective config, solve metadata and diagnostics."""
    return sanitize(
        {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": config,
            "solve": result.to_dict(),
            "diagnostics": diagnostics.to_dict(),
        }
    )


def validate_report(document: dict):
    """Raise jsonschema.ValidationError when the document breaks the published schema."""
    with open(REPORT_SCHEMA_PATH, "r") as f:
        schema = json.load(f)
    Draft202012Validator(schema).validate(document)
