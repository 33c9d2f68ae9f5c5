"""Projected limited-memory quasi-Newton solver with penalty escalation.

Box bounds and per-step rate bounds are kept feasible by projection after
every step. The obstacle constraint is folded into the objective as a
quadratic penalty whose weight grows by a fixed factor each round until the
worst violation is within tolerance.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from model.core.errors import NonFiniteError
from model.core.nmpc import (
    INPUT_SIZE,
    McpBounds,
    McpSolution,
    OcpProblem,
    cost_and_gradient,
    penalized_cost,
    rollout,
    stage_violations,
    tracking_cost,
)

logger = logging.getLogger('nmpc_solver')

# positions at stages 0 and 1 depend on x0 only
FIRST_CONTROLLABLE_STAGE = 2


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol_g: float = Field(1e-5, gt=0)
    max_iter: int = Field(400, ge=1)
    memory: int = Field(8, ge=1)
    rho0: float = Field(100.0, gt=0)
    rho_factor: float = Field(10.0, gt=1)
    max_rounds: int = Field(5, ge=1)
    obstacle_slack: float = Field(0.02, ge=0)
    armijo: float = Field(1e-4, gt=0, lt=1)
    backtrack: float = Field(0.5, gt=0, lt=1)
    max_backtracks: int = Field(30, ge=1)
    stall_tol: float = Field(1e-12, ge=0)


@dataclass
class InnerResult:
    u: np.ndarray
    value: float
    iterations: int
    converged: bool


def project(u: np.ndarray, bounds: McpBounds, u_prev: np.ndarray) -> np.ndarray:
    """Clip thrust to its box and sweep the attitude commands through the sliding rate box."""
    out = np.array(u, dtype=float, copy=True)
    lo = np.asarray(bounds.u_min)
    hi = np.asarray(bounds.u_max)
    rate = (bounds.d_phi_max, bounds.d_theta_max)
    out[:, 0] = np.clip(out[:, 0], lo[0], hi[0])
    for axis in (1, 2):
        prev = min(max(float(u_prev[axis]), lo[axis]), hi[axis])
        step = rate[axis - 1]
        column = out[:, axis]
        for j in range(len(column)):
            low = max(lo[axis], prev - step)
            high = min(hi[axis], prev + step)
            value = min(max(float(column[j]), low), high)
            column[j] = value
            prev = value
    return out


def shift_warm_start(prev: McpSolution) -> np.ndarray:
    u_seq = np.asarray(prev.u_seq)
    return np.vstack([u_seq[1:], u_seq[-1:]]).copy()


def _two_loop(grad: np.ndarray, history) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = history[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


class NmpcSolver:
    """Stateful solver for one control loop; remembers the last solution for warm starts."""

    def __init__(self, settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self.last_solution: Optional[McpSolution] = None

    def _obstacle_tolerance(self, prob: OcpProblem) -> np.ndarray:
        slack = self.settings.obstacle_slack
        return np.array([t.clearance ** 2 - max(t.clearance - slack, 0.0) ** 2 for t in prob.obstacles])

    def _controllable_violation(self, prob: OcpProblem, u: np.ndarray) -> float:
        """Worst excess of h over its tolerance; <= 0 means the round is done."""
        if not prob.obstacles:
            return 0.0
        h = stage_violations(prob, rollout(prob.x0, u, prob.params, prob.Ts))
        excess = h[:, FIRST_CONTROLLABLE_STAGE:] - self._obstacle_tolerance(prob)[:, None]
        return float(excess.max()) if excess.size else 0.0

    def _minimize(self, prob: OcpProblem, u0: np.ndarray, rho: float) -> InnerResult:
        cfg = self.settings
        shape = (prob.N, INPUT_SIZE)

        def objective(flat):
            return cost_and_gradient(prob, flat.reshape(shape), rho)

        def proj(flat):
            return project(flat.reshape(shape), prob.bounds, prob.u_prev).ravel()

        u = proj(u0.ravel())
        value, grad = objective(u)
        grad = grad.ravel()
        history = deque(maxlen=cfg.memory)
        stalls = 0

        for iteration in range(cfg.max_iter):
            pg = u - proj(u - grad)
            if np.max(np.abs(pg)) <= cfg.tol_g:
                return InnerResult(u, value, iteration, True)

            accepted = None
            for use_history in ((True, False) if history else (False,)):
                if use_history:
                    direction = _two_loop(grad, list(history))
                else:
                    gmax = float(np.max(np.abs(grad)))
                    direction = -grad * min(1.0, 0.1 / gmax)
                step = 1.0
                for _ in range(cfg.max_backtracks):
                    candidate = proj(u + step * direction)
                    decrease = float(grad @ (candidate - u))
                    if decrease < 0:
                        cand_value, cand_grad = objective(candidate)
                        if cand_value <= value + cfg.armijo * decrease:
                            accepted = (candidate, cand_value, cand_grad.ravel())
                            break
                    step *= cfg.backtrack
                if accepted is not None:
                    break
                history.clear()

            if accepted is None:
                logger.debug(f"line search failed at iteration {iteration}, "
                             f"projected gradient {np.max(np.abs(pg)):.3e}")
                return InnerResult(u, value, iteration, False)

            candidate, cand_value, cand_grad = accepted
            s = candidate - u
            y = cand_grad - grad
            sy = float(s @ y)
            if sy > 1e-12 * float(np.sqrt((s @ s) * (y @ y))) and sy > 0:
                history.append((s, y, 1.0 / sy))

            if abs(value - cand_value) <= cfg.stall_tol * max(1.0, abs(value)):
                stalls += 1
            else:
                stalls = 0
            u, value, grad = candidate, cand_value, cand_grad
            if stalls >= 2:
                return InnerResult(u, value, iteration + 1, True)

        return InnerResult(u, value, cfg.max_iter, False)

    def solve(self, prob: OcpProblem, warm_start: Optional[np.ndarray] = None) -> McpSolution:
        cfg = self.settings
        if warm_start is None:
            u0 = prob.hover_sequence
        else:
            u0 = np.asarray(warm_start, dtype=float)
            if u0.shape != (prob.N, INPUT_SIZE):
                raise ValueError(f"warm start must have shape {(prob.N, INPUT_SIZE)}, got {u0.shape}")
        if not np.all(np.isfinite(u0)):
            raise NonFiniteError("warm start contains non-finite values")

        rho = cfg.rho0 if prob.obstacles else 0.0
        rounds = cfg.max_rounds if prob.obstacles else 1
        best = None
        best_rho = rho
        best_violation = np.inf
        round_violations = []
        total_iterations = 0

        for round_index in range(rounds):
            result = self._minimize(prob, u0, rho)
            total_iterations += result.iterations
            violation = self._controllable_violation(prob, result.u.reshape(prob.N, INPUT_SIZE))
            if best is None or violation <= best_violation:
                best, best_violation, best_rho = result, violation, rho
            else:
                logger.debug(f"penalty round {round_index} raised violation to {violation:.3e}, keeping previous")
            round_violations.append(best_violation)
            if best_violation <= 0:
                break
            u0 = best.u.reshape(prob.N, INPUT_SIZE)
            rho *= cfg.rho_factor

        u_seq = best.u.reshape(prob.N, INPUT_SIZE)
        states = rollout(prob.x0, u_seq, prob.params, prob.Ts)
        h = stage_violations(prob, states)
        max_violation = max(0.0, float(h.max())) if h.size else 0.0
        cost = tracking_cost(prob, u_seq, states)
        if not np.isfinite(cost):
            raise NonFiniteError("solver produced a non-finite cost")

        converged = best.converged and best_violation <= 0
        if not converged:
            logger.warning(f"NMPC solve did not converge: {total_iterations} iterations, "
                           f"violation excess {best_violation:.3e}")

        solution = McpSolution(
            u_seq=u_seq,
            cost=cost,
            iterations=total_iterations,
            max_constraint_violation=max_violation,
            converged=converged,
            penalty_rounds=len(round_violations),
            round_violations=tuple(round_violations),
            penalized_cost=penalized_cost(prob, u_seq, best_rho),
        )
        self.last_solution = solution
        return solution

    def warm_start(self) -> Optional[np.ndarray]:
        if self.last_solution is None:
            return None
        return shift_warm_start(self.last_solution)
