"""
Oracle suite behind `qcurv verify`.

Every check compares library output against closed forms, exact polynomial identities
or scipy.integrate.quad. Checks never raise: an exception inside a check is reported as
a failure of that check.

"""

import logging
import math

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from tqdm import tqdm

from .config import DEFAULT_GRID_SIZE, DEFAULT_R_MAX, VERIFY_FAST_GRID_SIZE
from .constants import gamma_n, lambda1
from .diagnostics import (
    SphericalSolution,
    asymptotic_fit,
    fit_log_slope,
    pohozaev_lhs,
    reference_radial_integral,
    run_invariant_suite,
    spherical_oracle,
)
from .kernel import KernelOperator, assemble, ring_kernel
from .operator import CurvatureProfile, ProblemSpec, initial_state
from .radial import (
    PowerTail,
    RadialFunction,
    build_grid,
    integrate_laplacian,
    integrate_radial,
    radial_laplacian,
)
from .solver import SolveResult, SolveStatus


KernelHook = Callable[[KernelOperator], KernelOperator]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


class _Context:
    """Grids and kernels shared by the checks, built on first use."""

    def __init__(self, size: int, kernel_hook: Optional[KernelHook], progress: bool):
        self.size = size
        self.kernel_hook = kernel_hook
        self.progress = progress
        self._grids = {}
        self._kernels = {}

    def grid(self, n: int):
        if n not in self._grids:
            self._grids[n] = build_grid(n, r_max=DEFAULT_R_MAX, size=self.size)
        return self._grids[n]

    def kernel(self, n: int) -> KernelOperator:
        if n not in self._kernels:
            op = assemble(self.grid(n), progress=self.progress)
            if self.kernel_hook is not None:
                op = self.kernel_hook(op)
            self._kernels[n] = op
        return self._kernels[n]


def check_constants(ctx: _Context) -> CheckResult:
    expected = {3: 4 * math.pi**2, 4: 16 * math.pi**2, 5: 24 * math.pi**3, 6: 128 * math.pi**3}
    errors = {n: abs(lambda1(n) - value) / value for n, value in expected.items()}
    halves = all(gamma_n(n) == lambda1(n) / 2 for n in expected)
    worst = max(errors.values())
    return CheckResult(
        "constants",
        worst <= 1e-14 and halves,
        f"max rel err {worst:.2e}, gamma_n = Lambda_1/2: {halves}",
    )


def check_grid_volume(ctx: _Context) -> CheckResult:
    worst = 0.0
    for n in (3, 5):
        grid = ctx.grid(n)
        ball = grid.constants.omega_nm1 * grid.r_max**n / n
        volume = integrate_radial(grid, np.ones_like(grid.nodes)).value
        worst = max(worst, abs(volume - ball) / ball)
    return CheckResult("grid_volume", worst <= 1e-12, f"max rel err {worst:.2e}")


def check_gaussian_moment(ctx: _Context) -> CheckResult:
    worst = 0.0
    for n in (3, 5):
        grid = ctx.grid(n)
        value = integrate_radial(grid, np.exp(-grid.nodes**2)).value
        exact = math.pi ** (n / 2)
        worst = max(worst, abs(value - exact) / exact)
    return CheckResult("gaussian_moment", worst <= 1e-8, f"max rel err {worst:.2e}")


def check_fd_polynomials(ctx: _Context) -> CheckResult:
    worst = 0.0
    for n in (3, 5):
        grid = ctx.grid(n)
        r = grid.nodes
        cases = ((r**2, np.full_like(r, 2.0 * n)), (r**4, 4.0 * (n + 2) * r**2))
        for f, exact in cases:
            lap = radial_laplacian(RadialFunction(grid, f)).values
            worst = max(worst, float(np.max(np.abs(lap - exact) / np.maximum(1.0, np.abs(exact)))))
    return CheckResult("fd_polynomials", worst <= 1e-6, f"max scaled err {worst:.2e}")


def check_reconstruction(ctx: _Context) -> CheckResult:
    grid = ctx.grid(3)
    f = RadialFunction(grid, 1.0 + grid.nodes**2)
    rebuilt = integrate_laplacian(radial_laplacian(f)).values
    error = float(np.max(np.abs(rebuilt - (f.values - f.values[0])))) / grid.r_max**2
    return CheckResult("laplacian_reconstruction", error <= 1e-8, f"scaled err {error:.2e}")


def check_kernel_closed_form(ctx: _Context) -> CheckResult:
    r = np.geomspace(1e-3, 100.0, 100)
    s = np.concatenate([r[::10], r[5::10], r[3::10], np.linspace(0.05, 80.0, 70)])
    rr, ss = np.meshgrid(r, s, indexing="ij")
    closed = ring_kernel(3, rr, ss, method="closed")
    quad = ring_kernel(3, rr, ss, method="quadrature")
    error = float(np.max(np.abs(closed - quad)))
    return CheckResult("kernel_closed_form", error <= 1e-10, f"max abs diff {error:.2e}")


def check_kernel_symmetry(ctx: _Context) -> CheckResult:
    r = np.geomspace(1e-2, 50.0, 40)
    rr, ss = np.meshgrid(r, r, indexing="ij")
    worst = 0.0
    for n in (3, 4, 5, 6):
        k = ring_kernel(n, rr, ss, method="quadrature")
        worst = max(worst, float(np.max(np.abs(k - k.T))))
    return CheckResult("kernel_symmetry", worst <= 1e-12, f"max asymmetry {worst:.2e}")


def check_kernel_far_field(ctx: _Context) -> CheckResult:
    # mean_log ~ (1/2 - 1/n) rho^2 for small rho
    worst = 0.0
    for n in (3, 4, 5, 6):
        rho = 1e-3
        k = ring_kernel(n, 1.0, rho, method="quadrature")
        predicted = -(0.5 - 1.0 / n) * rho**2
        worst = max(worst, abs(k - predicted) / rho**2)
    return CheckResult("kernel_far_field", worst <= 1e-4, f"max rel err {worst:.2e}")


def check_lap0_sphere(ctx: _Context) -> CheckResult:
    worst = 0.0
    for n in (3, 5):
        op = ctx.kernel(n)
        f = SphericalSolution().density(n, op.grid.nodes)
        worst = max(worst, abs(op.lap0(f) + 2 * n) / (2 * n))
    return CheckResult("lap0_sphere", worst <= 1e-5, f"max rel err {worst:.2e}")


def _spherical(ctx: _Context, n: int) -> CheckResult:
    report = spherical_oracle(n, ctx.grid(n), ctx.kernel(n))
    return CheckResult(
        f"spherical_n{n}",
        report.passed,
        f"mass err {report.mass_error:.2e}, deviation {report.potential_deviation:.2e}, "
        f"C0 {report.c0:.2e} vs {report.c0_reference:.2e}",
    )


def check_spherical_n3(ctx: _Context) -> CheckResult:
    return _spherical(ctx, 3)


def check_spherical_n5(ctx: _Context) -> CheckResult:
    return _spherical(ctx, 5)


def check_spherical_scaling(ctx: _Context) -> CheckResult:
    n = 3
    grid = ctx.grid(n)
    worst = 0.0
    for lam in (0.5, 2.0):
        f = SphericalSolution(lam).density(n, grid.nodes)
        mass = integrate_radial(grid, f, PowerTail(2 * n)).value
        reference = reference_radial_integral(
            n, lambda s: float(SphericalSolution(lam).density(n, s))
        )
        for value in (mass, reference):
            worst = max(worst, abs(value - lambda1(n)) / lambda1(n))
    return CheckResult("spherical_scaling", worst <= 1e-6, f"max rel mass err {worst:.2e}")


def check_synthetic_fit(ctx: _Context) -> CheckResult:
    grid = ctx.grid(3)
    log_r = np.zeros_like(grid.nodes)
    log_r[1:] = np.log(grid.nodes[1:])
    slope, drift = fit_log_slope(grid, 0.7 - 3.0 * log_r)
    exact = abs(slope + 3.0) <= 1e-10 and drift <= 1e-10

    spec = ProblemSpec(n=3, kappa=lambda1(3), q=CurvatureProfile.constant(2.0), variant="THM2")
    sphere = RadialFunction(grid, SphericalSolution()(grid.nodes))
    fit = asymptotic_fit(spec, sphere)
    return CheckResult(
        "synthetic_fit",
        exact and fit.relative_error <= 0.02,
        f"exact slope err {abs(slope + 3.0):.1e}, drift {drift:.1e}, sphere slope {fit.slope:.4f}",
    )


def check_pohozaev_lhs(ctx: _Context) -> CheckResult:
    worst = 0.0
    for n in (3, 4):
        g = gamma_n(n)
        for factor, exact in ((1.0, 0.0), (0.5, -1.0), (1.5, 3.0)):
            worst = max(worst, abs(pohozaev_lhs(factor * lambda1(n), g) - exact))
    return CheckResult("pohozaev_lhs", worst <= 1e-14, f"max abs err {worst:.1e}")


def _injection_subject(ctx: _Context):
    spec = ProblemSpec(n=3, kappa=lambda1(3), q=CurvatureProfile.quartic(2.0, 1.0), variant="THM2")
    kernel = ctx.kernel(3)
    return spec, kernel, initial_state(spec, kernel)


def check_injection_cv(ctx: _Context) -> CheckResult:
    spec, kernel, state = _injection_subject(ctx)
    clean = run_invariant_suite(spec, SolveResult(SolveStatus.CONVERGED, state), kernel)
    shifted = replace(state, v=state.v.with_values(state.v.values + 1.0))
    corrupted = run_invariant_suite(spec, SolveResult(SolveStatus.CONVERGED, shifted), kernel)
    caught = clean.flags["normalization"] is True and corrupted.flags["normalization"] is False
    return CheckResult(
        "injection_unrefreshed_cv",
        caught,
        f"clean {clean.normalization_error:.1e}, corrupted {corrupted.normalization_error:.1e}",
    )


def check_injection_d0(ctx: _Context) -> CheckResult:
    spec, kernel, state = _injection_subject(ctx)
    corrupted = run_invariant_suite(
        spec, SolveResult(SolveStatus.CONVERGED, replace(state, d0=1.0)), kernel
    )
    caught = corrupted.flags["d0_negative"] is False and not corrupted.passed
    return CheckResult("injection_positive_d0", caught, f"d0 flag {corrupted.flags['d0_negative']}")


CHECKS = (
    check_constants,
    check_grid_volume,
    check_gaussian_moment,
    check_fd_polynomials,
    check_reconstruction,
    check_kernel_closed_form,
    check_kernel_symmetry,
    check_kernel_far_field,
    check_lap0_sphere,
    check_spherical_n3,
    check_spherical_n5,
    check_spherical_scaling,
    check_synthetic_fit,
    check_pohozaev_lhs,
    check_injection_cv,
    check_injection_d0,
)


def run_suite(
    fast: bool = False, kernel_hook: Optional[KernelHook] = None, progress: bool = True
) -> list[CheckResult]:
    """
    Run every oracle check.

    Parameters:
    -----------
    fast: bool
        Use grids of VERIFY_FAST_GRID_SIZE intervals instead of the default size.
    kernel_hook: callable
        Applied to each assembled kernel operator before use (failure injection).
    progress: bool
        Show a tqdm progress bar.

    """
    size = VERIFY_FAST_GRID_SIZE if fast else DEFAULT_GRID_SIZE
    ctx = _Context(size, kernel_hook, progress=False)
    results = []
    with tqdm(total=len(CHECKS), desc="Verifying", ncols=150, disable=not progress) as pbar:
        for check in CHECKS:
            try:
                result = check(ctx)
            except Exception as e:
                name = check.__name__.removeprefix("check_")
                result = CheckResult(name, False, f"raised {type(e).__name__}: {e}")
            if not result.passed:
                logging.warning(f"Check {result.name} failed: {result.detail}")
            results.append(result)
            pbar.update(1)
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(result.name) for result in results)
    lines = [f"{'check':<{width}}  result  detail", "-" * (width + 16)]
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        lines.append(f"{result.name:<{width}}  {status:<6}  {result.detail}")
    passed = sum(result.passed for result in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
