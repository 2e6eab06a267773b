"""Translational MAV model with first-order attitude loops, and its Euler discretization.

States are ``[px, py, pz, vx, vy, vz, phi, theta]`` and inputs are
``[T, phi_d, theta_d]`` with ``T`` the mass-normalized thrust in m/s^2.
The thrust direction uses ``R = R_x(phi) R_y(theta)``, i.e. the body z axis
expressed in the world frame is ``[sin(theta), -sin(phi)cos(theta), cos(phi)cos(theta)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

STATE_DIM = 8
INPUT_DIM = 3
G_DEFAULT = 9.81


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class MavState:
    p: tuple = (0.0, 0.0, 0.0)
    v: tuple = (0.0, 0.0, 0.0)
    phi: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise DomainError("MavState components must be finite")
        if abs(self.phi) > math.pi or abs(self.theta) > math.pi:
            raise DomainError("roll and pitch must lie in [-pi, pi]")

    def as_array(self) -> np.ndarray:
        return np.array([*self.p, *self.v, self.phi, self.theta], dtype=float)

    def __array__(self, dtype=None, copy=None):
        arr = self.as_array()
        return arr if dtype is None else arr.astype(dtype)

    @classmethod
    def from_array(cls, x) -> "MavState":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[0:3]), tuple(x[3:6]), float(x[6]), float(x[7]))


@dataclass(frozen=True)
class ControlInput:
    thrust: float = G_DEFAULT
    phi_d: float = 0.0
    theta_d: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust, self.phi_d, self.theta_d], dtype=float)

    def __array__(self, dtype=None, copy=None):
        arr = self.as_array()
        return arr if dtype is None else arr.astype(dtype)

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the prediction model (defaults are the simulated MAV)."""

    g: float = G_DEFAULT
    drag: tuple = (0.1, 0.1, 0.2)
    tau_phi: float = 0.5
    tau_theta: float = 0.5
    k_phi: float = 1.0
    k_theta: float = 1.0
    packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.g > 0:
            raise DomainError("g must be positive")
        if len(self.drag) != 3 or min(self.drag) < 0:
            raise DomainError("drag must be three non-negative coefficients")
        if not (self.tau_phi > 0 and self.tau_theta > 0):
            raise DomainError("time constants must be positive")
        object.__setattr__(self, "drag", tuple(float(a) for a in self.drag))
        packed = np.array(
            [self.g, *self.drag, self.tau_phi, self.tau_theta, self.k_phi, self.k_theta],
            dtype=float,
        )
        packed.setflags(write=False)
        object.__setattr__(self, "packed", packed)

    def hover_input(self) -> np.ndarray:
        return np.array([self.g, 0.0, 0.0])


def _vec(a, n: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=float)
    if arr.shape != (n,):
        raise DomainError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def state_derivative(x, u, params: ModelParams) -> np.ndarray:
    """Continuous-time rates ``dx/dt`` for state ``x`` under input ``u``."""
    xa = _vec(x, STATE_DIM, "state")
    ua = _vec(u, INPUT_DIM, "input")
    out = np.empty(STATE_DIM)
    _kernels.deriv(xa, ua, params.packed, out)
    return out


def euler_step(x, u, ts: float, params: ModelParams) -> np.ndarray:
    """One forward-Euler step of length ``ts``; angles are wrapped to [-pi, pi]."""
    if not ts > 0:
        raise DomainError("sampling time must be positive")
    xa = _vec(x, STATE_DIM, "state")
    ua = _vec(u, INPUT_DIM, "input")
    out = np.empty(STATE_DIM)
    _kernels.euler(xa, ua, float(ts), params.packed, out)
    return out


def rollout(x0, u_seq, ts: float, params: ModelParams) -> np.ndarray:
    """Predicted trajectory of shape ``(N+1, 8)`` under ``u_seq`` of shape ``(N, 3)``."""
    if not ts > 0:
        raise DomainError("sampling time must be positive")
    xa = _vec(x0, STATE_DIM, "state")
    us = np.ascontiguousarray(u_seq, dtype=float)
    if us.ndim != 2 or us.shape[0] < 1 or us.shape[1] != INPUT_DIM:
        raise DomainError("u_seq must be a non-empty (N, 3) sequence")
    if not np.all(np.isfinite(us)):
        raise DomainError("u_seq must be finite")
    return _kernels.rollout(xa, us, float(ts), params.packed)
