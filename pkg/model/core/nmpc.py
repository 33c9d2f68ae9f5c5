"""Receding-horizon optimal control problem for the delayed quadrotor.

The decision variable is an (N, 3) array of inputs [F, phi_d, theta_d]. States
come from a forward-Euler rollout of the model dynamics starting at the
predicted state. The cost tracks the reference, penalizes input changes, and
anchors inputs near hover. Obstacles enter through the sphere constraint
h = (r_s + r_d)^2 - |p_o - p|^2 <= 0, which the solver handles by a quadratic
penalty on max(0, h).
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from model.core.dynamics import STATE_SIZE, ControlInput, UavParams, euler_step
from model.core.errors import NonFiniteError

INPUT_SIZE = 3


class McpWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    Q_x: Tuple[float, float, float, float, float, float, float, float] = (8, 8, 20, 1, 1, 1, 2, 2)
    Q_u: Tuple[float, float, float] = (2, 4, 4)
    Q_du: Tuple[float, float, float] = (4, 8, 8)

    @field_validator('Q_x', 'Q_u', 'Q_du')
    @classmethod
    def _non_negative(cls, value):
        if any(q < 0 or not math.isfinite(q) for q in value):
            raise ValueError(f"weights must be finite and non-negative, got {value}")
        return value

    @model_validator(mode='after')
    def _tracks_position(self):
        if not any(q > 0 for q in self.Q_x[0:3]):
            raise ValueError("at least one position weight must be positive")
        return self


class McpBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    u_min: Tuple[float, float, float] = (2.0, -0.35, -0.35)
    u_max: Tuple[float, float, float] = (18.0, 0.35, 0.35)
    d_phi_max: float = 0.1
    d_theta_max: float = 0.1

    @model_validator(mode='after')
    def _consistent(self):
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError(f"u_min {self.u_min} exceeds u_max {self.u_max}")
        if not (self.d_phi_max > 0 and self.d_theta_max > 0):
            raise ValueError("rate bounds must be positive")
        return self

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(u, self.u_min), self.u_max)


@dataclass(frozen=True, eq=False)
class ObstacleTrack:
    """Predicted obstacle centres over the horizon, shape (N + 1, 3)."""
    positions: np.ndarray
    r_d: float
    r_s: float
    obstacle_id: int = 0

    @property
    def clearance(self) -> float:
        return self.r_s + self.r_d


@dataclass(frozen=True, eq=False)
class OcpProblem:
    x0: np.ndarray
    ref: np.ndarray
    u_prev: np.ndarray
    weights: McpWeights
    bounds: McpBounds
    params: UavParams
    N: int
    Ts: float
    obstacles: List[ObstacleTrack] = field(default_factory=list)
    u_hover: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"horizon must be at least 1, got {self.N}")
        if not self.Ts > 0:
            raise ValueError(f"sampling period must be positive, got {self.Ts}")
        if self.ref.shape != (self.N + 1, STATE_SIZE):
            raise ValueError(f"reference must have shape {(self.N + 1, STATE_SIZE)}, got {self.ref.shape}")
        for track in self.obstacles:
            if track.positions.shape != (self.N + 1, 3):
                raise ValueError(f"obstacle rollout must have shape {(self.N + 1, 3)}")
        if self.u_hover is None:
            object.__setattr__(self, 'u_hover', np.array([self.params.gravity, 0.0, 0.0]))

    @property
    def hover_sequence(self) -> np.ndarray:
        return np.tile(self.u_hover, (self.N, 1))


@dataclass(frozen=True, eq=False)
class McpSolution:
    u_seq: np.ndarray
    cost: float
    iterations: int
    max_constraint_violation: float
    converged: bool
    penalty_rounds: int = 1
    round_violations: Tuple[float, ...] = ()
    penalized_cost: float = 0.0

    @property
    def first(self) -> ControlInput:
        return ControlInput.from_array(self.u_seq[0])


def rollout(x0: Sequence[float], u_seq: np.ndarray, params: UavParams, Ts: float) -> np.ndarray:
    coeffs = params.coefficients()
    steps = len(u_seq)
    states = np.empty((steps + 1, STATE_SIZE))
    x = [float(v) for v in x0]
    states[0] = x
    for j in range(steps):
        u = u_seq[j]
        x = euler_step(x, (float(u[0]), float(u[1]), float(u[2])), coeffs, Ts)
        states[j + 1] = x
    if not np.all(np.isfinite(states)):
        raise NonFiniteError("rollout diverged")
    return states


def obstacle_violation(p, p_o, r_s: float, r_d: float) -> float:
    """Sphere constraint value; the configuration is safe iff the result is <= 0."""
    if not (r_s > 0 and r_d > 0):
        raise ValueError("obstacle radii must be positive")
    d = np.asarray(p_o, dtype=float) - np.asarray(p, dtype=float)
    return (r_s + r_d) ** 2 - float(d @ d)


def stage_violations(prob: OcpProblem, states: np.ndarray) -> np.ndarray:
    """h for every obstacle (rows) and stage j = 0..N (columns)."""
    if not prob.obstacles:
        return np.zeros((0, prob.N + 1))
    rows = []
    for track in prob.obstacles:
        diff = track.positions - states[:, 0:3]
        rows.append(track.clearance ** 2 - np.einsum('ij,ij->i', diff, diff))
    return np.vstack(rows)


def _previous_inputs(prob: OcpProblem, u_seq: np.ndarray) -> np.ndarray:
    return np.vstack([prob.u_prev[None, :], u_seq[:-1]])


def tracking_cost(prob: OcpProblem, u_seq: np.ndarray, states: np.ndarray) -> float:
    qx = np.asarray(prob.weights.Q_x)
    qu = np.asarray(prob.weights.Q_u)
    qdu = np.asarray(prob.weights.Q_du)
    state_err = prob.ref - states
    du = u_seq - _previous_inputs(prob, u_seq)
    dh = u_seq - prob.u_hover
    return float(np.sum(state_err ** 2 @ qx) + np.sum(du ** 2 @ qdu) + np.sum(dh ** 2 @ qu))


def penalty_value(violations: np.ndarray, rho: float) -> float:
    if violations.size == 0 or rho == 0:
        return 0.0
    active = np.maximum(violations, 0.0)
    return float(rho * np.sum(active ** 2))


def evaluate_cost(prob: OcpProblem, u_seq) -> float:
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.shape != (prob.N, INPUT_SIZE):
        raise ValueError(f"input sequence must have shape {(prob.N, INPUT_SIZE)}, got {u_seq.shape}")
    states = rollout(prob.x0, u_seq, prob.params, prob.Ts)
    cost = tracking_cost(prob, u_seq, states)
    if not math.isfinite(cost):
        raise NonFiniteError("cost evaluated to a non-finite value")
    return cost


def penalized_cost(prob: OcpProblem, u_seq: np.ndarray, rho: float) -> float:
    states = rollout(prob.x0, u_seq, prob.params, prob.Ts)
    return tracking_cost(prob, u_seq, states) + penalty_value(stage_violations(prob, states), rho)


def cost_and_gradient(prob: OcpProblem, u_seq: np.ndarray, rho: float = 0.0):
    """Penalized cost and its exact gradient with respect to u_seq (adjoint sweep)."""
    params = prob.params
    Ts = prob.Ts
    N = prob.N
    states = rollout(prob.x0, u_seq, params, Ts)
    violations = stage_violations(prob, states)
    value = tracking_cost(prob, u_seq, states) + penalty_value(violations, rho)

    qx = np.asarray(prob.weights.Q_x)
    qu = np.asarray(prob.weights.Q_u)
    qdu = np.asarray(prob.weights.Q_du)

    # d(stage cost)/dx_j for every stage
    dldx = -2.0 * qx * (prob.ref - states)
    for track, h in zip(prob.obstacles, violations):
        active = np.maximum(h, 0.0)
        if rho > 0 and np.any(active > 0):
            dldx[:, 0:3] += (4.0 * rho * active)[:, None] * (track.positions - states[:, 0:3])

    du = u_seq - _previous_inputs(prob, u_seq)
    grad = 2.0 * qu * (u_seq - prob.u_hover) + 2.0 * qdu * du
    grad[:-1] -= 2.0 * qdu * du[1:]

    ax, ay, az = params.A
    k_phi, a_phi = params.K_phi, params.alpha_phi
    k_theta, a_theta = params.K_theta, params.alpha_theta

    lam = dldx[N].tolist()
    for j in range(N - 1, -1, -1):
        phi, theta = states[j, 6], states[j, 7]
        thrust = u_seq[j, 0]
        cphi, sphi = math.cos(phi), math.sin(phi)
        cth, sth = math.cos(theta), math.sin(theta)
        lpx, lpy, lpz, lvx, lvy, lvz, lphi, ltheta = lam

        b_dot_lv = cphi * sth * lvx - sphi * lvy + cphi * cth * lvz
        grad[j, 0] += Ts * b_dot_lv
        grad[j, 1] += Ts * (k_phi / a_phi) * lphi
        grad[j, 2] += Ts * (k_theta / a_theta) * ltheta

        dphi = -sphi * sth * lvx - cphi * lvy - sphi * cth * lvz
        dtheta = cphi * cth * lvx - cphi * sth * lvz
        row = dldx[j]
        lam = [
            row[0] + lpx,
            row[1] + lpy,
            row[2] + lpz,
            row[3] + lvx + Ts * (lpx - ax * lvx),
            row[4] + lvy + Ts * (lpy - ay * lvy),
            row[5] + lvz + Ts * (lpz - az * lvz),
            row[6] + lphi + Ts * (thrust * dphi - lphi / a_phi),
            row[7] + ltheta + Ts * (thrust * dtheta - ltheta / a_theta),
        ]

    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteError("cost or gradient evaluated to a non-finite value")
    return value, grad
