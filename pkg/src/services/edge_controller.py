"""Edge-side controller: delay estimation, state prediction and the NMPC solve."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from model.core.dynamics import ControlInput, ObstacleState, UavState, obstacle_rollout
from model.core.errors import NonFiniteError
from model.core.nmpc import McpSolution, ObstacleTrack, OcpProblem
from model.core.predictor import PredictedObstacle, PredictedState, predict_obstacle, predict_uav
from model.core.solver import NmpcSolver
from model.core.trajectory import reference_window
from src.schemas.config_schemas import ScenarioConfig
from src.schemas.message_schemas import (
    CommandEcho,
    ControlCommand,
    ObstacleOdometry,
    TimestampedMessage,
    UavOdometry,
)
from src.services.delay_estimator import DelayEstimator
from src.services.sim_channel import StalenessFilter

logger = logging.getLogger('edge_controller')


@dataclass
class ControlDecision:
    command: ControlCommand
    solution: McpSolution
    prediction: PredictedState
    pred_t: float
    tau_hat: float
    obstacles: List[PredictedObstacle] = field(default_factory=list)


@dataclass
class _ObstacleTrack:
    observed: ObstacleState
    sent_at: float


class EdgeController:
    def __init__(self, cfg: ScenarioConfig, solver: Optional[NmpcSolver] = None):
        self.cfg = cfg
        self.params = cfg.uav
        self.reference = cfg.reference_spec()
        self.solver = solver or NmpcSolver(cfg.solver)
        self.estimator = DelayEstimator(cfg.estimator_window)
        self.filter = StalenessFilter()
        self.u_hover = np.asarray(cfg.u_hover or (self.params.gravity, 0.0, 0.0), dtype=float)
        self.u_prev = ControlInput.from_array(self.u_hover)
        # input acting on the plant over the prediction interval; hover until an echo arrives
        self.u_echoed = ControlInput.from_array(self.u_hover)
        self.observed: Optional[UavState] = None
        self.obstacles: Dict[int, _ObstacleTrack] = {}
        self.last_heard: Optional[float] = None
        self.tau_sample: Optional[float] = None
        self.solves = 0

    def _safety_radius(self, obstacle_id: int) -> float:
        launches = self.cfg.launches
        if 0 <= obstacle_id < len(launches):
            return launches[obstacle_id].r_s
        return launches[0].r_s if launches else self.cfg.safety.safety_radius

    def on_message(self, msg: TimestampedMessage):
        if not self.filter.accept(msg):
            return
        payload = msg.payload
        heard = msg.received_at if msg.received_at is not None else msg.sent_at
        if isinstance(payload, UavOdometry):
            self.observed = payload.to_state(msg.sent_at)
            self.last_heard = heard
        elif isinstance(payload, ObstacleOdometry):
            r_d = payload.r_d
            if 0 <= payload.obstacle_id < len(self.cfg.launches):
                r_d = self.cfg.launches[payload.obstacle_id].r_d
            observed = ObstacleOdometry(payload.p_o, payload.v_o, r_d, payload.obstacle_id).to_state(msg.sent_at)
            self.obstacles[payload.obstacle_id] = _ObstacleTrack(observed, msg.sent_at)
        elif isinstance(payload, CommandEcho) and msg.echo_of is not None:
            self.last_heard = heard
            self.u_echoed = ControlInput(payload.F, payload.phi_d, payload.theta_d)
            if self.cfg.use_estimator and self.estimator.record(msg.echo_of, heard):
                self.tau_sample = self.estimator.last_sample

    def on_messages(self, messages: List[TimestampedMessage]):
        for msg in messages:
            self.on_message(msg)

    @property
    def tau_hat(self) -> float:
        return self.estimator.tau_hat if self.cfg.use_estimator else 0.0

    def _expire_obstacles(self, now: float):
        for obstacle_id, track in list(self.obstacles.items()):
            if now - track.sent_at > self.cfg.obstacle_timeout_s:
                logger.debug(f"Dropping obstacle {obstacle_id}, last seen at {track.sent_at:.3f}s")
                del self.obstacles[obstacle_id]

    def _predict(self):
        tau = self.tau_hat
        if not self.cfg.use_estimator:
            prediction = PredictedState.from_observation(self.observed)
        else:
            prediction = predict_uav(self.observed, self.u_echoed, tau, self.params, self.cfg.predictor)
        obstacles = []
        for obstacle_id in sorted(self.obstacles):
            observed = self.obstacles[obstacle_id].observed
            if self.cfg.use_estimator:
                obstacles.append(predict_obstacle(observed, tau, self.params.g_vec, self.cfg.predictor))
            else:
                obstacles.append(PredictedObstacle(observed.p_o.copy(), observed.v_o.copy(),
                                                   observed.r_d, obstacle_id))
        return prediction, obstacles

    def build_problem(self, k: int, prediction: PredictedState,
                      obstacles: List[PredictedObstacle]) -> OcpProblem:
        cfg = self.cfg
        tracks = [
            ObstacleTrack(
                obstacle_rollout(o.p_o_hat, o.v_o_hat, self.params, cfg.Ts, cfg.horizon),
                o.r_d,
                self._safety_radius(o.obstacle_id),
                o.obstacle_id,
            )
            for o in obstacles
        ]
        return OcpProblem(
            x0=prediction.as_vector(),
            ref=reference_window(self.reference, k, cfg.horizon),
            u_prev=self.u_prev.as_array(),
            weights=cfg.weights,
            bounds=cfg.bounds,
            params=self.params,
            N=cfg.horizon,
            Ts=cfg.Ts,
            obstacles=tracks,
            u_hover=self.u_hover,
        )

    def step(self, k: int, now: float) -> Optional[ControlDecision]:
        """One control tick; None until the first odometry has arrived."""
        if self.observed is None:
            return None
        self._expire_obstacles(now)
        prediction, obstacles = self._predict()
        if not np.all(np.isfinite(prediction.as_vector())):
            raise NonFiniteError(f"prediction became non-finite at t={now:.3f}s")
        problem = self.build_problem(k, prediction, obstacles)
        solution = self.solver.solve(problem, self.solver.warm_start())
        self.solves += 1
        command = ControlCommand.from_input(solution.first)
        self.u_prev = solution.first
        logger.debug(f"k={k} tau_hat={self.tau_hat * 1e3:.1f}ms iters={solution.iterations} "
                     f"cost={solution.cost:.4f}")
        return ControlDecision(command, solution, prediction, self.observed.t + prediction.tau_used,
                               self.tau_hat, obstacles)

    def link_age(self, now: float) -> float:
        return math.inf if self.last_heard is None else now - self.last_heard
