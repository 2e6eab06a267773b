"""Random optimal-control instances shared by the unit and acceptance tests."""

import numpy as np

from msnmpc.delay_model import ScenarioSet
from msnmpc.dynamics import ModelParams, rollout
from msnmpc.obstacles import CylinderObstacle, trajectory_penalty
from msnmpc.ocp import OcpProblem, OcpWeights

ALL_TIMES = (0.05, 0.07, 0.1, 0.2, 0.33)
MP = ModelParams()


def random_inputs(rng, n):
    return np.column_stack([rng.uniform(7.0, 12.5, n), rng.uniform(-0.17, 0.17, (n, 2))])


def random_problem(rng, horizon, n_branches, with_obstacles, power=None):
    """A random instance; with obstacles, at least one branch passes through one."""
    times = tuple(sorted(rng.choice(ALL_TIMES, n_branches, replace=False)))
    w = rng.dirichlet(np.ones(n_branches))
    x0 = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.1, 0.1, 2)])
    x_ref = np.zeros(8)
    x_ref[:3] = rng.uniform(-3, 3, 3)
    u_prev = random_inputs(rng, 1)[0]
    us = random_inputs(rng, horizon)
    obstacles = []
    if with_obstacles:
        traj = rollout(x0, us, times[0], MP)
        for _ in range(100):
            k = rng.integers(1, horizon + 1)
            c = traj[k, :2] + rng.uniform(-0.3, 0.3, 2)
            obs = CylinderObstacle(float(c[0]), float(c[1]), float(rng.uniform(0.4, 1.5)),
                                   float(max(traj[k, 2], 0.0) + rng.uniform(0.5, 3.0)))
            if trajectory_penalty(traj, [obs]) > 0:
                obstacles = [obs, CylinderObstacle(5.0, 5.0, 0.5, 2.0)]
                break
    weights = OcpWeights(
        q_x=tuple(rng.uniform(1, 50, 8)),
        q_u=tuple(rng.uniform(1, 30, 3)),
        q_du=tuple(rng.uniform(1, 200, 3)),
        mu_obs=float(rng.uniform(1, 1000)),
        penalty_power=int(power if power is not None else rng.integers(1, 3)),
    )
    problem = OcpProblem(
        horizon=horizon,
        scenarios=ScenarioSet(times, tuple(w / w.sum())),
        x0=x0,
        x_ref=x_ref,
        u_ref=MP.hover_input(),
        u_prev=u_prev,
        weights=weights,
        obstacles=obstacles,
        model=MP,
    )
    return problem, us
