"""Multi-stage optimal control problem over a tree of sampling times.

All branches share one control sequence ``U`` of shape ``(N, 3)``. Branch
``i`` rolls the model out with sampling time ``t_s^i`` and contributes

    sum_{j=0}^{N-1} |x_{j+1} - x_ref|^2_Qx + |u_j - u_ref|^2_Qu + |u_j - u_{j-1}|^2_Qdu
        + mu_obs * sum_{j=0}^{N} violation(x_j) ** power

with ``u_{-1}`` the input applied in the previous control cycle and
``power`` either 1 (the plain penalty) or 2 (its square, which is smooth at
the obstacle boundary). Branch costs are combined with the scenario weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .delay_model import ScenarioSet
from .dynamics import INPUT_DIM, DomainError, ModelParams, rollout
from .obstacles import pack_obstacles, violation

INFEASIBLE_COST = 1e30


class NonFiniteRolloutError(FloatingPointError):
    def __init__(self, scenario_index: int):
        super().__init__(f"non-finite rollout in scenario {scenario_index}")
        self.scenario_index = scenario_index


@dataclass(frozen=True)
class OcpWeights:
    q_x: tuple = (6.0, 6.0, 20.0, 50.0, 50.0, 10.0, 20.0, 20.0)
    q_u: tuple = (20.0, 20.0, 20.0)
    q_du: tuple = (40.0, 65.0, 65.0)
    mu_obs: float = 4.0
    penalty_power: int = 1

    def __post_init__(self):
        if len(self.q_x) != 8 or len(self.q_u) != 3 or len(self.q_du) != 3:
            raise DomainError("weights need 8 state, 3 input and 3 rate entries")
        if min(*self.q_x, *self.q_u, *self.q_du, self.mu_obs) < 0:
            raise DomainError("weights must be non-negative")
        if self.penalty_power not in (1, 2):
            raise DomainError("penalty_power must be 1 or 2")


def default_bounds(g: float = 9.81, max_angle: float = np.pi / 18):
    return (np.array([0.0, -max_angle, -max_angle]), np.array([2.0 * g, max_angle, max_angle]))


@dataclass
class OcpProblem:
    horizon: int
    scenarios: ScenarioSet
    x0: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    u_prev: np.ndarray
    weights: OcpWeights = field(default_factory=OcpWeights)
    obstacles: list = field(default_factory=list)
    bounds: tuple = field(default_factory=default_bounds)
    model: ModelParams = field(default_factory=ModelParams)
    # packed arrays for the compiled kernels; refreshed by __post_init__
    _obs: np.ndarray = field(init=False, repr=False)
    _qx: np.ndarray = field(init=False, repr=False)
    _qu: np.ndarray = field(init=False, repr=False)
    _qdu: np.ndarray = field(init=False, repr=False)
    _times: np.ndarray = field(init=False, repr=False)
    _w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.horizon) < 2:
            raise DomainError("horizon must be at least 2")
        self.horizon = int(self.horizon)
        self.x0 = np.ascontiguousarray(self.x0, dtype=float)
        self.x_ref = np.ascontiguousarray(self.x_ref, dtype=float)
        self.u_ref = np.ascontiguousarray(self.u_ref, dtype=float)
        self.u_prev = np.ascontiguousarray(self.u_prev, dtype=float)
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        if lo.shape != (INPUT_DIM,) or hi.shape != (INPUT_DIM,) or np.any(lo > hi):
            raise DomainError("bounds must be two 3-vectors with u_min <= u_max")
        self.bounds = (lo, hi)
        self._obs = pack_obstacles(self.obstacles)
        self._qx = np.asarray(self.weights.q_x, dtype=float)
        self._qu = np.asarray(self.weights.q_u, dtype=float)
        self._qdu = np.asarray(self.weights.q_du, dtype=float)
        self._times = np.asarray(self.scenarios.sampling_times, dtype=float)
        self._w = np.asarray(self.scenarios.weights, dtype=float)

    def kernel_args(self) -> tuple:
        """Positional problem data in the order the compiled kernels expect."""
        return (
            self.x0, self._times, self._w, self.model.packed, self.x_ref, self._qx, self._obs,
            float(self.weights.mu_obs), int(self.weights.penalty_power), self.u_ref, self.u_prev,
            self._qu, self._qdu,
        )

    def with_state(self, x0, u_prev=None, scenarios=None) -> "OcpProblem":
        return replace(
            self,
            x0=x0,
            u_prev=self.u_prev if u_prev is None else u_prev,
            scenarios=self.scenarios if scenarios is None else scenarios,
        )


def _as_sequence(problem: OcpProblem, u_seq) -> np.ndarray:
    us = np.ascontiguousarray(u_seq, dtype=float).reshape(-1, INPUT_DIM)
    if us.shape[0] != problem.horizon:
        raise DomainError(f"control sequence must have {problem.horizon} entries")
    return us


def input_cost(problem: OcpProblem, us: np.ndarray) -> float:
    qu = np.asarray(problem.weights.q_u)
    qdu = np.asarray(problem.weights.q_du)
    du = np.diff(us, axis=0, prepend=problem.u_prev[None, :])
    return float(np.sum(qu * (us - problem.u_ref) ** 2) + np.sum(qdu * du**2))


def input_cost_grad(problem: OcpProblem, us: np.ndarray) -> np.ndarray:
    qu = np.asarray(problem.weights.q_u)
    qdu = np.asarray(problem.weights.q_du)
    du = np.diff(us, axis=0, prepend=problem.u_prev[None, :])
    grad = 2.0 * qu * (us - problem.u_ref) + 2.0 * qdu * du
    grad[:-1] -= 2.0 * qdu * du[1:]
    return grad


def _state_part(problem: OcpProblem, us: np.ndarray, i: int, want_grad: bool):
    ts = problem.scenarios.sampling_times[i]
    return _kernels.scenario_state_cost(
        problem.x0, us, ts, problem.model.packed, problem.x_ref, problem._qx,
        problem._obs, float(problem.weights.mu_obs), problem.weights.penalty_power, want_grad,
    )


def scenario_cost(problem: OcpProblem, u_seq, i: int) -> float:
    """Cost of branch ``i``; a non-finite rollout yields ``INFEASIBLE_COST``."""
    us = _as_sequence(problem, u_seq)
    cost, _, ok = _state_part(problem, us, i, False)
    if not ok:
        return INFEASIBLE_COST
    return cost + input_cost(problem, us)


def scenario_cost_reference(problem: OcpProblem, u_seq, i: int) -> float:
    """Branch cost assembled from the public rollout and penalty functions."""
    us = _as_sequence(problem, u_seq)
    traj = rollout(problem.x0, us, problem.scenarios.sampling_times[i], problem.model)
    err = traj[1:] - problem.x_ref
    tracking = float(np.sum(problem._qx * err**2))
    power = problem.weights.penalty_power
    penalty = sum(violation(x[:3], o) ** power for x in traj for o in problem.obstacles)
    return tracking + input_cost(problem, us) + problem.weights.mu_obs * penalty


def _evaluate(problem: OcpProblem, us: np.ndarray, want_grad: bool):
    return _kernels.multi_stage_cost(problem.x0, us, *problem.kernel_args()[1:], want_grad)


def multi_stage_cost(problem: OcpProblem, u_seq) -> float:
    """Scenario-weighted cost; ``INFEASIBLE_COST`` if any rollout blows up."""
    cost, _, bad = _evaluate(problem, _as_sequence(problem, u_seq), False)
    return INFEASIBLE_COST if bad >= 0 else cost


def multi_stage_cost_and_gradient(problem: OcpProblem, u_seq):
    """Weighted cost and its adjoint gradient, shape ``(N, 3)``."""
    cost, grad, bad = _evaluate(problem, _as_sequence(problem, u_seq), True)
    if bad >= 0:
        raise NonFiniteRolloutError(bad)
    return cost, grad


def curvature_diagonal(problem: OcpProblem, u_seq) -> np.ndarray:
    """Gauss-Newton estimate of the Hessian diagonal, shape ``(N, 3)``."""
    us = _as_sequence(problem, u_seq)
    return _kernels.gauss_newton_diagonal(
        problem.x0, us, problem._times, problem._w, problem.model.packed,
        problem._qx, problem._qu, problem._qdu,
    )


def multi_stage_gradient(problem: OcpProblem, u_seq) -> np.ndarray:
    """Gradient of the weighted cost with respect to the flattened sequence (3N,)."""
    return multi_stage_cost_and_gradient(problem, u_seq)[1].ravel()


def scenario_gradient(problem: OcpProblem, u_seq, i: int) -> np.ndarray:
    us = _as_sequence(problem, u_seq)
    _, g, ok = _state_part(problem, us, i, True)
    if not ok:
        raise NonFiniteRolloutError(i)
    return (g + input_cost_grad(problem, us)).ravel()
