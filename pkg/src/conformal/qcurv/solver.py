"""
Damped Picard iteration on t T(v) = v with continuation in kappa.

Each continuation stage targets kappa_s on a geometric ladder kappa/8 -> kappa and
starts from the previous stage's converged (v, Delta v(0)). A stage that runs out of
iterations is restarted from its warm start with half the damping.

"""

import logging
import math

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from .config import (
    AV_TOL,
    BLOWUP_CORE_RADIUS,
    DAMPING_FLOOR,
    DAMPING_PATIENCE,
    DEFAULT_BLOWUP_SUP,
    DEFAULT_CONTINUATION_RATIO,
    DEFAULT_CONTINUATION_STEPS,
    DEFAULT_DAMPING,
    DEFAULT_MAX_ITER,
    DEFAULT_STAGE_RETRIES,
    DEFAULT_T,
    DEFAULT_TOL,
    MIN_SOLVE_R_MAX,
)
from .kernel import KernelOperator
from .operator import (
    AdmissibilityError,
    BlowUpError,
    IterationState,
    NormalizationError,
    OperatorImage,
    ProblemSpec,
    apply_T,
)
from .radial import RadialFunction


class SolveStatus(str, Enum):
    CONVERGED = "Converged"
    NOT_CONVERGED = "NotConverged"
    BLOW_UP = "BlowUp"
    ADMISSIBILITY_ERROR = "AdmissibilityError"


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters:
    -----------
    damping: float
        Initial relaxation theta in (0, 1].
    tol: float
        Sup-norm tolerance on t T(v) - v over r <= r_max / 2.
    max_iter: int
        Iteration budget of one continuation stage attempt.
    continuation_steps: int
        Number of kappa stages.
    blowup_sup: float
        Threshold on sup over r <= 1/8 of w = v + c_v + (1/n) log t.
    t: float
        Homotopy parameter in (0, 1].
    damping_floor, damping_patience:
        theta is halved (not below the floor) after `damping_patience` consecutive
        residual increases.
    stage_retries: int
        Restarts of a stage that exhausts max_iter.

    """

    damping: float = DEFAULT_DAMPING
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    continuation_steps: int = DEFAULT_CONTINUATION_STEPS
    blowup_sup: float = DEFAULT_BLOWUP_SUP
    t: float = DEFAULT_T
    damping_floor: float = DAMPING_FLOOR
    damping_patience: int = DAMPING_PATIENCE
    stage_retries: int = DEFAULT_STAGE_RETRIES

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if int(self.continuation_steps) != self.continuation_steps or self.continuation_steps < 1:
            raise ValueError(
                f"continuation_steps must be a positive integer, got {self.continuation_steps}"
            )
        if not 0 < self.t <= 1:
            raise ValueError(f"t must lie in (0, 1], got {self.t}")
        if not 0 < self.damping_floor <= self.damping:
            raise ValueError(
                f"damping_floor must lie in (0, damping], got {self.damping_floor}"
            )
        if self.damping_patience < 1 or self.stage_retries < 0:
            raise ValueError("damping_patience must be >= 1 and stage_retries >= 0")
        if not self.blowup_sup > 0:
            raise ValueError(f"blowup_sup must be positive, got {self.blowup_sup}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class StageStalled(RuntimeError):
    """A continuation stage used its whole iteration budget."""


@dataclass
class SolveResult:
    status: SolveStatus
    state: Optional[IterationState]
    residual_history: list = field(default_factory=list)
    stage_iterations: list = field(default_factory=list)
    damping_schedule: list = field(default_factory=list)
    restarts: int = 0
    solution: Optional[RadialFunction] = None
    kappa_stages: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == SolveStatus.CONVERGED

    def to_dict(self) -> dict:
        final = None
        if self.state is not None:
            final = {
                "c_v": self.state.c_v,
                "A_v": self.state.A_v,
                "d0": self.state.d0,
                "t": self.state.t,
                "kappa_current": self.state.kappa_current,
                "residual": self.state.residual,
            }
        return {
            "status": self.status.value,
            "message": self.message,
            "kappa_stages": list(self.kappa_stages),
            "stage_iterations": list(self.stage_iterations),
            "restarts": self.restarts,
            "damping_schedule": [list(entry) for entry in self.damping_schedule],
            "residual_history": list(self.residual_history),
            "final_state": final,
        }


def continuation_targets(
    kappa: float, steps: int, ratio: float = DEFAULT_CONTINUATION_RATIO
) -> list[float]:
    """Geometric ladder from kappa / ratio to kappa (just kappa for a single step)."""
    if steps == 1:
        return [kappa]
    return [kappa * ratio ** (-(steps - 1 - s) / (steps - 1)) for s in range(steps)]


def update_residual(
    state: IterationState, image: OperatorImage, t: float, window: np.ndarray
) -> tuple[float, np.ndarray, float]:
    update = t * image.potential.values - state.v.values
    d0_update = t * image.d0 - state.d0
    residual = max(float(np.max(np.abs(update[window]))), abs(d0_update))
    return residual, update, d0_update


def fixed_point_residual(
    spec: ProblemSpec, state: IterationState, kernel: KernelOperator
) -> float:
    """sup over r <= r_max/2 of |t T(v) - v|, together with the Delta v(0) component."""
    image = apply_T(spec, state, kernel)
    window = kernel.grid.nodes <= kernel.grid.r_max / 2
    return update_residual(state, image, state.t, window)[0]


class _Stage:
    """One continuation stage, keeping the last measured state for failure reports."""

    def __init__(self, spec, cfg, kernel, v, d0, kappa, stage_index, history, schedule):
        self.spec = spec
        self.cfg = cfg
        self.kernel = kernel
        self.start_v = v
        self.start_d0 = d0
        self.kappa = kappa
        self.stage_index = stage_index
        self.history = history
        self.schedule = schedule
        self.last_state = None
        self.iterations = 0
        grid = kernel.grid
        self.window = grid.nodes <= grid.r_max / 2
        self.core = grid.nodes <= BLOWUP_CORE_RADIUS

    def run(self, damping: float) -> IterationState:
        cfg, spec = self.cfg, self.spec
        t = cfg.t
        theta = damping
        v = self.start_v
        d0 = self.start_d0
        previous = math.inf
        increases = 0

        for iteration in range(1, cfg.max_iter + 1):
            self.iterations += 1
            probe = IterationState(v=v, c_v=0.0, A_v=0.0, d0=d0, t=t, kappa_current=self.kappa)
            image = apply_T(spec, probe, self.kernel)
            state = replace(probe, c_v=image.c_v, A_v=image.A_v)
            self.last_state = state

            sup_w = float(np.max(state.w[self.core]))
            if not math.isfinite(sup_w) or sup_w > cfg.blowup_sup:
                raise BlowUpError(f"sup of w on r <= {BLOWUP_CORE_RADIUS} reached {sup_w:.3e}")

            residual, update, d0_update = update_residual(state, image, t, self.window)
            self.history.append(residual)
            self.last_state = replace(state, residual=residual)
            logging.debug(
                f"stage {self.stage_index} it {iteration}: residual={residual:.3e} "
                f"c_v={image.c_v:.6g} d0={d0:.6g}"
            )

            if residual <= cfg.tol:
                return replace(self.last_state, converged=True)

            increases = increases + 1 if residual > previous else 0
            if increases >= cfg.damping_patience and theta > cfg.damping_floor:
                theta = max(theta / 2, cfg.damping_floor)
                increases = 0
                self.schedule.append((self.stage_index, iteration, theta))
                logging.info(f"Stage {self.stage_index}: damping reduced to {theta:g}")
            previous = residual

            v = v.with_values(v.values + theta * update)
            d0 = d0 + theta * d0_update

        raise StageStalled(
            f"Stage {self.stage_index} (kappa={self.kappa:.6g}) did not reach tol={cfg.tol:g} "
            f"in {cfg.max_iter} iterations (residual {self.history[-1]:.3e})"
        )


def _check_invariants(spec: ProblemSpec, state: IterationState) -> Optional[str]:
    if not state.d0 < 0:
        return f"converged state has Delta v(0) = {state.d0:.3e} >= 0"
    # A_v = 0 only holds for THM1; the THM2 correction itself grows like r^2
    if spec.variant == "THM1" and state.A_v > AV_TOL:
        return f"converged state has A_v = {state.A_v:.3e} > {AV_TOL:g}"
    return None


def solve(
    spec: ProblemSpec, cfg: SolverConfig, kernel: KernelOperator
) -> SolveResult:
    """
    Solve t T(v) = v for a problem on the kernel's grid.

    Numerical failures are returned as a status; only invalid inputs raise.

    Parameters:
    -----------
    spec: ProblemSpec
        Problem statement.
    cfg: SolverConfig
        Iteration parameters.
    kernel: KernelOperator
        Assembled potential operator; its grid is the solve grid.

    """
    grid = kernel.grid
    if grid.n != spec.n:
        raise ValueError(f"Kernel was assembled for n = {grid.n}, problem has n = {spec.n}")
    if grid.r_max < MIN_SOLVE_R_MAX:
        raise ValueError(f"A solve needs r_max >= {MIN_SOLVE_R_MAX}, got {grid.r_max}")

    targets = continuation_targets(spec.kappa, cfg.continuation_steps)
    result = SolveResult(status=SolveStatus.NOT_CONVERGED, state=None, kappa_stages=targets)

    admissibility = spec.check_admissibility(grid)
    if spec.variant == "THM1" and not admissibility["bounded"]:
        result.status = SolveStatus.ADMISSIBILITY_ERROR
        result.message = f"sup of Q e^(nP) is not finite on the grid ({admissibility})"
        logging.info(result.message)
        return result

    v = RadialFunction(grid, np.zeros_like(grid.nodes))
    d0 = 0.0
    for index, kappa_s in enumerate(targets):
        logging.info(f"Stage {index + 1}/{len(targets)}: kappa = {kappa_s:.6g}")
        stage = _Stage(
            spec,
            cfg,
            kernel,
            v,
            d0,
            kappa_s,
            index,
            result.residual_history,
            result.damping_schedule,
        )
        try:
            for attempt in Retrying(
                stop=stop_after_attempt(cfg.stage_retries + 1),
                retry=retry_if_exception_type(StageStalled),
                reraise=True,
                before_sleep=lambda retry_state: logging.info(
                    f"Restarting stage {index + 1} with damping "
                    f"{_restart_damping(cfg, retry_state.attempt_number + 1):g}"
                ),
            ):
                with attempt:
                    number = attempt.retry_state.attempt_number
                    if number > 1:
                        result.restarts += 1
                    state = stage.run(_restart_damping(cfg, number))
        except StageStalled as e:
            return _fail(result, stage, SolveStatus.NOT_CONVERGED, str(e))
        except (BlowUpError, NormalizationError) as e:
            return _fail(result, stage, SolveStatus.BLOW_UP, str(e))
        except AdmissibilityError as e:
            return _fail(result, stage, SolveStatus.ADMISSIBILITY_ERROR, str(e))

        result.stage_iterations.append(stage.iterations)
        logging.info(
            f"Stage {index + 1} converged in {stage.iterations} iterations "
            f"(residual {state.residual:.3e})"
        )
        v, d0 = state.v, state.d0

    result.state = state
    violation = _check_invariants(spec, state)
    if violation is not None:
        result.status = SolveStatus.NOT_CONVERGED
        result.state = replace(state, converged=False)
        result.message = violation
        logging.info(f"Fixed point rejected: {violation}")
        return result

    result.status = SolveStatus.CONVERGED
    result.solution = assemble_solution(spec, state)
    result.message = f"Converged after {sum(result.stage_iterations)} iterations"
    return result


def _restart_damping(cfg: SolverConfig, attempt_number: int) -> float:
    return max(cfg.damping / 2 ** (attempt_number - 1), cfg.damping_floor)


def _fail(result: SolveResult, stage: _Stage, status: SolveStatus, message: str) -> SolveResult:
    result.stage_iterations.append(stage.iterations)
    result.state = stage.last_state
    result.status = status
    result.message = message
    logging.info(f"Solve terminated with {status.value}: {message}")
    return result


def assemble_solution(spec: ProblemSpec, state: IterationState) -> RadialFunction:
    """
    u = P + v + c_v - (1 + A_v) r^4 (THM1) or u = v + c_v (THM2).

    """
    if not state.converged:
        raise ValueError("assemble_solution needs a converged state")
    r = state.v.grid.nodes
    u = state.v.values + state.c_v
    if spec.variant == "THM1":
        u = u + spec.polynomial(r) - (1 + state.A_v) * r**4
    return state.v.with_values(u)
