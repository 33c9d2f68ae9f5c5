"""Quadrotor translational dynamics with first-order attitude lag.

Thrust is mass-normalized (m/s^2), so hover thrust equals g and the 1/m
factor of the force balance is absorbed. Yaw is held at zero. The same
scalar derivative backs the plant stepper and the NMPC rollout so both
produce bit-identical trajectories.
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from model.core.errors import NonFiniteError, OperatingRegimeError

GRAVITY = 9.81
STATE_SIZE = 8
HALF_PI = 0.5 * math.pi


class UavParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: float = Field(1.0, gt=0)
    A: Tuple[float, float, float] = (0.1, 0.1, 0.2)
    alpha_phi: float = Field(0.15, gt=0)
    alpha_theta: float = Field(0.15, gt=0)
    K_phi: float = Field(1.0, gt=0)
    K_theta: float = Field(1.0, gt=0)
    g_vec: Tuple[float, float, float] = (0.0, 0.0, -GRAVITY)

    @field_validator('A')
    @classmethod
    def _drag_non_negative(cls, value):
        if any(a < 0 or not math.isfinite(a) for a in value):
            raise ValueError(f"drag coefficients must be finite and >= 0, got {value}")
        return value

    @property
    def gravity(self) -> float:
        return -self.g_vec[2]

    def coefficients(self) -> tuple:
        return (*self.A, *self.g_vec, self.K_phi, self.alpha_phi, self.K_theta, self.alpha_theta)


@dataclass(frozen=True)
class ControlInput:
    F: float
    phi_d: float
    theta_d: float

    @classmethod
    def hover(cls, gravity: float = GRAVITY) -> 'ControlInput':
        return cls(gravity, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ControlInput':
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.F, self.phi_d, self.theta_d])

    def is_finite(self) -> bool:
        return math.isfinite(self.F) and math.isfinite(self.phi_d) and math.isfinite(self.theta_d)


@dataclass(frozen=True, eq=False)
class UavState:
    p: np.ndarray
    v: np.ndarray
    phi: float = 0.0
    theta: float = 0.0
    t: float = 0.0

    @classmethod
    def hover_at(cls, position, t: float = 0.0) -> 'UavState':
        return cls(np.asarray(position, dtype=float).copy(), np.zeros(3), 0.0, 0.0, t)

    @classmethod
    def from_vector(cls, x: Sequence[float], t: float = 0.0) -> 'UavState':
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), float(x[6]), float(x[7]), t)

    def as_vector(self) -> np.ndarray:
        return np.array([*self.p, *self.v, self.phi, self.theta])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector()))) and math.isfinite(self.t)


@dataclass(frozen=True, eq=False)
class ObstacleState:
    p_o: np.ndarray
    v_o: np.ndarray
    r_d: float
    t: float = 0.0
    obstacle_id: int = 0

    def __post_init__(self):
        if not self.r_d > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.r_d}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.p_o)) and np.all(np.isfinite(self.v_o)))


@dataclass(frozen=True)
class StateDerivative:
    v: np.ndarray
    a: np.ndarray
    phi_dot: float
    theta_dot: float


def rotation_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """World-from-body rotation, composed yaw-pitch-roll (Z-Y-X)."""
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cphi, -sphi], [0.0, sphi, cphi]])
    ry = np.array([[cth, 0.0, sth], [0.0, 1.0, 0.0], [-sth, 0.0, cth]])
    rz = np.array([[cpsi, -spsi, 0.0], [spsi, cpsi, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def body_z_axis(phi: float, theta: float) -> Tuple[float, float, float]:
    # third column of rotation_matrix(phi, theta, 0)
    cphi = math.cos(phi)
    return (cphi * math.sin(theta), -math.sin(phi), cphi * math.cos(theta))


def thrust_to_force(u: ControlInput, phi: float, theta: float) -> np.ndarray:
    bx, by, bz = body_z_axis(phi, theta)
    return np.array([u.F * bx, u.F * by, u.F * bz])


def state_derivative(x: Sequence[float], u: Sequence[float], coeffs: tuple) -> List[float]:
    """Scalar right-hand side on an 8-vector [p, v, phi, theta] and input [F, phi_d, theta_d]."""
    ax, ay, az, gx, gy, gz, k_phi, a_phi, k_theta, a_theta = coeffs
    vx, vy, vz, phi, theta = x[3], x[4], x[5], x[6], x[7]
    thrust = u[0]
    cphi = math.cos(phi)
    return [
        vx,
        vy,
        vz,
        thrust * (cphi * math.sin(theta)) + gx - ax * vx,
        thrust * (-math.sin(phi)) + gy - ay * vy,
        thrust * (cphi * math.cos(theta)) + gz - az * vz,
        (k_phi * u[1] - phi) / a_phi,
        (k_theta * u[2] - theta) / a_theta,
    ]


def euler_step(x: Sequence[float], u: Sequence[float], coeffs: tuple, dt: float) -> List[float]:
    dx = state_derivative(x, u, coeffs)
    return [x[i] + dt * dx[i] for i in range(STATE_SIZE)]


def uav_derivative(s: UavState, u_applied: ControlInput, params: UavParams) -> StateDerivative:
    dx = state_derivative(s.as_vector(), (u_applied.F, u_applied.phi_d, u_applied.theta_d),
                          params.coefficients())
    return StateDerivative(np.array(dx[0:3]), np.array(dx[3:6]), dx[6], dx[7])


def check_operating_regime(phi: float, theta: float, t: float = 0.0):
    if abs(phi) >= HALF_PI or abs(theta) >= HALF_PI:
        raise OperatingRegimeError(f"attitude left the small-angle regime at t={t:.3f}s "
                                   f"(phi={phi:.3f}, theta={theta:.3f})")


def step_uav(s: UavState, u_applied: ControlInput, params: UavParams, dt: float) -> UavState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = euler_step(s.as_vector(), (u_applied.F, u_applied.phi_d, u_applied.theta_d),
                   params.coefficients(), dt)
    if not all(math.isfinite(value) for value in x):
        raise NonFiniteError(f"UAV state became non-finite at t={s.t + dt:.3f}s")
    check_operating_regime(x[6], x[7], s.t + dt)
    return UavState.from_vector(x, s.t + dt)


def step_obstacle(o: ObstacleState, params: UavParams, dt: float) -> ObstacleState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = np.asarray(params.g_vec)
    return ObstacleState(o.p_o + o.v_o * dt, o.v_o + g * dt, o.r_d, o.t + dt, o.obstacle_id)


def obstacle_rollout(p_o: np.ndarray, v_o: np.ndarray, params: UavParams, dt: float,
                     steps: int) -> np.ndarray:
    """Positions of a ballistic obstacle over `steps` forward-Euler steps, shape (steps + 1, 3)."""
    g = np.asarray(params.g_vec)
    positions = np.empty((steps + 1, 3))
    p = np.asarray(p_o, dtype=float).copy()
    v = np.asarray(v_o, dtype=float).copy()
    positions[0] = p
    for j in range(steps):
        p = p + v * dt
        v = v + g * dt
        positions[j + 1] = p
    return positions
