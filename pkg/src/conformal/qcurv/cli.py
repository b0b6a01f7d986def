"""
Command-line front end.

    qcurv solve --config run.toml [--out DIR] [--kernel-cache PATH]
    qcurv verify [--fast]
    qcurv probe --config probe.toml [--out DIR]

Exit codes: 0 success, 1 numerical failure (artifacts still written), 2 bad configuration.

"""

import argparse
import json
import logging
import os
import sys
import tomllib

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from tqdm import tqdm

from .config import DEFAULT_GRADING, DEFAULT_GRID_SIZE, DEFAULT_R_MAX, MIN_SOLVE_R_MAX
from .constants import DimensionalConstants
from .diagnostics import (
    depolynomialized_profile,
    nonexistence_probe,
    report_document,
    run_invariant_suite,
    validate_report,
)
from .kernel import KernelOperator, load_or_assemble
from .operator import CurvatureProfile, ProblemSpec
from .radial import RadialGrid, build_grid, radial_laplacian, write_columns
from .solver import SolverConfig, solve
from .verify import KernelHook, format_table, run_suite


MODES = ("solve", "probe")
PROBE_COLUMNS = ("kappa", "status", "pohozaev_lhs", "pohozaev_rhs", "sign_diagnostic")


@dataclass(frozen=True)
class GridConfig:
    size: int = DEFAULT_GRID_SIZE
    r_max: float = DEFAULT_R_MAX
    grading: float = DEFAULT_GRADING

    def build(self, n: int) -> RadialGrid:
        return build_grid(n, r_max=self.r_max, size=self.size, grading=self.grading)

    def to_dict(self) -> dict:
        return {"size": self.size, "r_max": self.r_max, "grading": self.grading}


@dataclass(frozen=True)
class ProbeConfig:
    """Absolute kappa values swept by `qcurv probe`."""

    kappas: tuple = ()

    def to_dict(self) -> dict:
        return {"kappas": list(self.kappas)}


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one invocation needs.

    Parameters:
    -----------
    problem: ProblemSpec
        Dimension, kappa, Q, P and variant.
    solver: SolverConfig
        Iteration parameters.
    grid: GridConfig
        Radial grid (size, r_max, grading).
    output_dir: str
        Directory receiving the artifacts.
    kernel_cache: str
        Optional path of the binary kernel cache.
    mode: str
        "solve" or "probe".
    probe: ProbeConfig
        kappa sweep of the probe mode.

    """

    problem: ProblemSpec
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    output_dir: str = "."
    kernel_cache: Optional[str] = None
    mode: str = "solve"
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode {self.mode}, expected one of {MODES}")
        if self.grid.r_max < MIN_SOLVE_R_MAX:
            raise ValueError(f"A solve needs r_max >= {MIN_SOLVE_R_MAX}, got {self.grid.r_max}")
        if self.mode == "probe":
            if self.problem.n not in (3, 4):
                raise ValueError(
                    f"The probe is only available for n in (3, 4), got {self.problem.n}"
                )
            if self.problem.q.kind != "gaussian":
                raise ValueError(f"The probe needs a gaussian Q, got {self.problem.q.kind}")
            if len(self.probe.kappas) == 0:
                raise ValueError("The probe needs a non-empty kappa list")
            if any(not kappa > 0 for kappa in self.probe.kappas):
                raise ValueError(f"Probe kappas must be positive, got {list(self.probe.kappas)}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "problem": self.problem.to_dict(),
            "grid": self.grid.to_dict(),
            "solver": self.solver.to_dict(),
            "output": {"directory": self.output_dir, "kernel_cache": self.kernel_cache},
            "probe": self.probe.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """
        Parse the dict form of a config (a TOML document or the output of to_dict).

        kappa may be given absolutely or as kappa_factor, a multiple of Lambda_1.
        The probe sweep takes kappas or kappa_factors the same way; in probe mode the
        problem kappa is optional and defaults to the first swept value.

        """
        data = dict(data)
        unknown = set(data) - {"mode", "problem", "grid", "solver", "output", "probe"}
        if unknown:
            raise ValueError(f"Unknown configuration sections {sorted(unknown)}")

        problem = dict(data.get("problem", {}))
        for key in ("n", "variant", "q"):
            if key not in problem:
                raise ValueError(f"Missing required field problem.{key}")
        n = problem.pop("n")
        if not isinstance(n, int) or isinstance(n, bool):
            raise ValueError(f"problem.n must be an integer, got {n!r}")
        lambda1 = DimensionalConstants.for_dimension(n).lambda1
        mode = data.get("mode", "solve")

        probe = dict(data.get("probe", {}))
        if "kappas" in probe and "kappa_factors" in probe:
            raise ValueError("Give either probe.kappas or probe.kappa_factors, not both")
        if "kappa_factors" in probe:
            kappas = tuple(float(factor) * lambda1 for factor in probe.pop("kappa_factors"))
        else:
            kappas = tuple(float(value) for value in probe.pop("kappas", ()))
        if probe:
            raise ValueError(f"Unknown probe fields {sorted(probe)}")

        kappa = problem.pop("kappa", None)
        factor = problem.pop("kappa_factor", None)
        if mode == "probe" and kappa is None and factor is None and kappas:
            # the sweep supplies every kappa; the first one stands in for the problem
            kappa = kappas[0]
        spec = ProblemSpec(
            n=n,
            kappa=_resolve_kappa(kappa, factor, lambda1),
            q=CurvatureProfile.from_dict(problem.pop("q")),
            p_coeffs=tuple(problem.pop("p_coeffs", ())),
            variant=problem.pop("variant"),
        )
        if problem:
            raise ValueError(f"Unknown problem fields {sorted(problem)}")

        output = dict(data.get("output", {}))
        try:
            grid = GridConfig(**data.get("grid", {}))
            solver = SolverConfig(**data.get("solver", {}))
        except TypeError as e:
            raise ValueError(f"Invalid grid or solver section: {e}") from e

        return cls(
            problem=spec,
            solver=solver,
            grid=grid,
            output_dir=output.get("directory", "."),
            kernel_cache=output.get("kernel_cache"),
            mode=mode,
            probe=ProbeConfig(kappas),
        )


def _resolve_kappa(kappa, factor, lambda1: float) -> float:
    if kappa is not None and factor is not None:
        raise ValueError("Give either problem.kappa or problem.kappa_factor, not both")
    if kappa is None and factor is None:
        raise ValueError("Missing required field problem.kappa (or problem.kappa_factor)")
    return float(kappa) if kappa is not None else float(factor) * lambda1


def load_config(path: str) -> RunConfig:
    """Read a TOML run configuration."""
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return RunConfig.from_dict(data)


def _load(path: str, out_dir: Optional[str], kernel_cache: Optional[str]) -> Optional[RunConfig]:
    try:
        cfg = load_config(path)
    except (OSError, ValueError) as e:
        logging.error(f"Invalid configuration {path}: {e}")
        return None
    if out_dir is not None:
        cfg = replace(cfg, output_dir=out_dir)
    if kernel_cache is not None:
        cfg = replace(cfg, kernel_cache=kernel_cache)
    return cfg


def _kernel(grid: RadialGrid, cache_path: Optional[str]) -> Optional[KernelOperator]:
    try:
        return load_or_assemble(grid, cache_path, progress=True)
    except OSError as e:
        logging.error(f"Kernel cache {cache_path} is not usable: {e}")
        return None


def cmd_solve(
    config_path: str, out_dir: Optional[str] = None, kernel_cache: Optional[str] = None
) -> int:
    """Assemble, solve and diagnose one configuration, writing its artifacts."""
    cfg = _load(config_path, out_dir, kernel_cache)
    if cfg is None:
        return 2
    spec = cfg.problem
    try:
        grid = cfg.grid.build(spec.n)
    except ValueError as e:
        logging.error(f"Invalid grid configuration: {e}")
        return 2

    os.makedirs(cfg.output_dir, exist_ok=True)
    kernel = _kernel(grid, cfg.kernel_cache)
    if kernel is None:
        return 2
    result = solve(spec, cfg.solver, kernel)
    diagnostics = run_invariant_suite(spec, result, kernel)

    if result.solution is not None:
        state = result.state
        path = os.path.join(cfg.output_dir, "solution.csv")
        write_columns(
            path,
            {
                "r": grid.nodes,
                "u": result.solution.values,
                "v": state.v.values,
                "lap_v": radial_laplacian(state.v).values,
            },
        )
        logging.info(f"Wrote {path}")

        path = os.path.join(cfg.output_dir, "plotdata.csv")
        write_columns(
            path,
            {
                "r": grid.nodes[1:],
                "log_r": np.log(grid.nodes[1:]),
                "g": depolynomialized_profile(spec, state)[1:],
            },
        )
        logging.info(f"Wrote {path}")

    document = report_document(cfg.to_dict(), result, diagnostics)
    validate_report(document)
    path = os.path.join(cfg.output_dir, "report.json")
    with open(path, "w") as f:
        json.dump(document, f, indent=2)
    logging.info(f"Wrote {path}")

    if result.converged and diagnostics.passed:
        logging.info(f"{result.message}; all invariants pass")
        return 0
    failing = [name for name, value in diagnostics.flags.items() if value is False]
    logging.info(f"Solve finished with status {result.status.value}, failing checks: {failing}")
    return 1


def cmd_verify(fast: bool = False, kernel_hook: Optional[KernelHook] = None) -> int:
    """Run the oracle suite and print its table."""
    results = run_suite(fast=fast, kernel_hook=kernel_hook)
    print(format_table(results))
    return 0 if all(result.passed for result in results) else 1


def cmd_probe(config_path: str, out_dir: Optional[str] = None) -> int:
    """Sweep kappa for a Gaussian Q and write probe.csv; solver outcomes never fail the command."""
    cfg = _load(config_path, out_dir, None)
    if cfg is None:
        return 2
    if cfg.mode != "probe":
        logging.error(f"{config_path} is a {cfg.mode} configuration, expected mode = \"probe\"")
        return 2
    spec = cfg.problem
    try:
        grid = cfg.grid.build(spec.n)
    except ValueError as e:
        logging.error(f"Invalid grid configuration: {e}")
        return 2

    os.makedirs(cfg.output_dir, exist_ok=True)
    kernel = _kernel(grid, cfg.kernel_cache)
    if kernel is None:
        return 2
    rows = []
    for kappa in tqdm(cfg.probe.kappas, desc="Probing kappa", ncols=150):
        report = nonexistence_probe(
            spec.n, spec.q.amplitude, spec.q.rate, kappa, kernel, cfg.solver
        )
        logging.info(
            f"kappa={kappa:.6g}: {report.status.value}, sign diagnostic {report.sign_diagnostic}"
        )
        rows.append(
            (
                float(report.kappa),
                report.status.value,
                float(report.pohozaev_lhs),
                float(report.pohozaev_rhs),
                report.sign_diagnostic,
            )
        )

    path = os.path.join(cfg.output_dir, "probe.csv")
    write_columns(path, dict(zip(PROBE_COLUMNS, zip(*rows))))
    logging.info(f"Wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcurv", description="Radial prescribed Q-curvature solver and its verification suite."
    )
    parser.add_argument("--verbose", action="store_true", help="Log every iteration")
    commands = parser.add_subparsers(dest="command", required=True)

    solve_parser = commands.add_parser("solve", help="Solve one configuration")
    solve_parser.add_argument("--config", type=str, required=True, help="TOML run configuration")
    solve_parser.add_argument("--out", type=str, default=None, help="Output directory")
    solve_parser.add_argument("--kernel-cache", type=str, default=None, help="Kernel cache file")

    verify_parser = commands.add_parser("verify", help="Run the oracle suite")
    verify_parser.add_argument(
        "--fast", action="store_true", help="Use coarse grids (quick smoke run)"
    )

    probe_parser = commands.add_parser("probe", help="Sweep kappa for a Gaussian Q")
    probe_parser.add_argument("--config", type=str, required=True, help="TOML probe configuration")
    probe_parser.add_argument("--out", type=str, default=None, help="Output directory")
    return parser


def main(argv: Optional[list] = None) -> int:
    """
    Entrypoint of the `qcurv` command

    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    if args.command == "solve":
        return cmd_solve(args.config, args.out, args.kernel_cache)
    if args.command == "verify":
        return cmd_verify(fast=args.fast)
    return cmd_probe(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
