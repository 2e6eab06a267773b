"""Box-constrained projected quasi-Newton solver for the shared control sequence."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .ocp import (
    NonFiniteRolloutError,
    OcpProblem,
    curvature_diagonal,
    multi_stage_cost,
    multi_stage_cost_and_gradient,
)

STATUSES = ("converged", "iteration-cap", "time-cap", "stalled", "failed")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 500
    tolerance: float = 1e-3
    memory: int = 10
    time_budget: Optional[float] = None  # ms
    precondition: bool = True
    max_backtracks: int = 30
    record_history: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if int(self.memory) < 0:
            raise ValueError("memory must be non-negative")


@dataclass
class OcpSolution:
    u_seq: np.ndarray
    status: str
    iterations: int
    solve_time: float  # ms
    final_cost: float
    final_residual: float
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != "failed"


def project_box(u_seq, bounds) -> np.ndarray:
    lo, hi = bounds
    return np.clip(np.asarray(u_seq, dtype=float), lo, hi)


def projected_residual(u: np.ndarray, grad: np.ndarray, bounds) -> float:
    """Infinity norm of ``u - P(u - grad)``; zero exactly at stationary points."""
    return float(np.max(np.abs(u - project_box(u - grad, bounds))))


def shift_warm_start(previous) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    u = previous.u_seq if isinstance(previous, OcpSolution) else np.asarray(previous, float)
    return np.concatenate([u[1:], u[-1:]], axis=0)


_CODES = {1: "converged", 2: "stalled", 3: "stalled"}


def solve(problem: OcpProblem, warm_start, config: SolverConfig = SolverConfig()) -> OcpSolution:
    """Minimize the multi-stage cost over the input box.

    The inputs are rescaled by the Gauss-Newton curvature diagonal at the
    warm start. Each iteration then takes a limited-memory quasi-Newton
    direction restricted to the free variables, projects the trial point
    onto the box, and backtracks along the projected path until the Armijo
    condition holds. Stationarity is measured in the original variables.
    """
    t_start = time.perf_counter()
    n_steps = problem.horizon
    u = project_box(np.asarray(warm_start, dtype=float).reshape(n_steps, 3), problem.bounds)

    def elapsed_ms():
        return (time.perf_counter() - t_start) * 1e3

    try:
        f, g = multi_stage_cost_and_gradient(problem, u)
    except NonFiniteRolloutError as exc:
        return OcpSolution(u, "failed", 0, elapsed_ms(), float("inf"), float("inf"), str(exc))

    if config.precondition:
        scale = 1.0 / np.sqrt(np.maximum(curvature_diagonal(problem, u), 1e-12))
    else:
        scale = np.ones_like(u)

    lo = np.tile(problem.bounds[0], n_steps)
    hi = np.tile(problem.bounds[1], n_steps)
    mem = int(config.memory)
    S = np.zeros((mem, 3 * n_steps))
    Y = np.zeros((mem, 3 * n_steps))
    rho = np.zeros(max(mem, 1))
    mem_state = np.zeros(2, dtype=np.int64)
    u = u.ravel().copy()
    g = g.ravel().copy()
    args = problem.kernel_args()

    history = [f] if config.record_history else []
    if config.record_history:
        chunk = 1
    elif config.time_budget is not None:
        chunk = 10
    else:
        chunk = int(config.max_iterations)
    status, message = "iteration-cap", ""
    res = projected_residual(u, g, (lo, hi))
    iterations = 0
    while True:
        if res <= config.tolerance:
            status = "converged"
            break
        if iterations >= config.max_iterations:
            break
        if config.time_budget is not None and elapsed_ms() >= config.time_budget:
            status = "time-cap"
            break
        todo = min(chunk, int(config.max_iterations) - iterations)
        f, done, code, res = _kernels.projected_lbfgs(
            u, g, f, lo, hi, scale.ravel(), S, Y, rho, mem_state, todo,
            float(config.tolerance), int(config.max_backtracks), *args,
        )
        iterations += done
        if config.record_history:
            history.append(f)
        if code:
            status = _CODES[code]
            if code == 2:
                message = "line search made no progress"
            elif code == 3:
                message = "non-finite rollout at trial point"
            break

    return OcpSolution(
        u.reshape(n_steps, 3), status, iterations, elapsed_ms(), float(f), float(res), message, history
    )
