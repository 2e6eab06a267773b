"""Vertical cylinder obstacles and their clamped-product violation measure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DomainError


@dataclass(frozen=True)
class CylinderObstacle:
    center_x: float
    center_y: float
    radius: float
    height: float

    def __post_init__(self):
        if not (math.isfinite(self.center_x) and math.isfinite(self.center_y)):
            raise DomainError("obstacle center must be finite")
        if not (self.radius > 0 and self.height > 0):
            raise DomainError("obstacle radius and height must be positive")

    def inflated(self, margin: float) -> "CylinderObstacle":
        return CylinderObstacle(self.center_x, self.center_y, self.radius + margin, self.height)


def pack_obstacles(obstacles) -> np.ndarray:
    """Stack obstacles as ``(K, 4)`` rows of ``[x, y, radius, height]``."""
    rows = [(o.center_x, o.center_y, o.radius, o.height) for o in obstacles]
    return np.array(rows, dtype=float).reshape(-1, 4)


def h_cylinder(p, obs: CylinderObstacle) -> float:
    """Signed lateral measure: positive strictly inside the infinite cylinder."""
    dx = p[0] - obs.center_x
    dy = p[1] - obs.center_y
    return obs.radius**2 - dx * dx - dy * dy


def h_zmax(p, obs: CylinderObstacle) -> float:
    return obs.height - p[2]


def violation(p, obs: CylinderObstacle) -> float:
    return max(h_cylinder(p, obs), 0.0) * max(h_zmax(p, obs), 0.0)


def trajectory_penalty(traj, obstacles) -> float:
    """Summed violation over every trajectory point and every obstacle."""
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    return float(sum(violation(x[:3], o) for x in traj for o in obstacles))
