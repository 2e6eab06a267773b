"""Delay-aware multi-stage NMPC for remotely controlled MAVs.

The controller predicts the same input sequence under several sampling
times and weights each prediction branch by the probability, under a
Gamma fit of recently observed round-trip delays, that the next command
arrives within that branch's sampling time.
"""

from .config import ConfigError, ControllerConfig, DelayConfig, EpisodeConfig, SolverSettings, load_config
from .delay_model import (
    DelayBuffer,
    FitDegenerateError,
    GammaParams,
    ScenarioSet,
    fit_gamma,
    gamma_cdf,
    raw_scenario_weights,
    sample_delay,
    scenario_weights,
)
from .dynamics import ControlInput, DomainError, MavState, ModelParams, euler_step, rollout, state_derivative
from .obstacles import CylinderObstacle, trajectory_penalty, violation
from .ocp import OcpProblem, OcpWeights, multi_stage_cost, multi_stage_gradient, scenario_cost
from .sim_harness import (
    EpisodeMetrics,
    SimulationTrace,
    collision_check,
    emit_outputs,
    path_length,
    read_trace,
    run_episode,
)
from .solver import OcpSolution, SolverConfig, solve

__version__ = "0.1.0"
