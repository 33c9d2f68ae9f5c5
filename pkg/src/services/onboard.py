"""The vehicle side of the loop: plant integration, obstacle launches, command echo."""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from model.core.dynamics import ControlInput, ObstacleState, UavParams, UavState, step_obstacle, step_uav
from src.schemas.config_schemas import LaunchEvent, ScenarioConfig
from src.schemas.message_schemas import (
    CommandEcho,
    ControlCommand,
    ObstacleOdometry,
    TimestampedMessage,
    UavOdometry,
)
from src.services.message_bus import MessageBus
from src.services.safety_monitor import LinkState, SafetyMonitor, hover_in_place
from src.services.sim_channel import StalenessFilter

logger = logging.getLogger('onboard')

AIM_ITERATIONS = 5


def aim_launch(event: LaunchEvent, uav: UavState, params: UavParams) -> Tuple[np.ndarray, np.ndarray]:
    """Initial position and velocity of a thrown obstacle.

    Without an explicit v0 the throw leads the vehicle: flight time comes from
    distance over the launch speed, the target is the vehicle's position
    extrapolated by that time, and the velocity cancels the ballistic drop.
    """
    p0 = np.asarray(event.p0, dtype=float)
    if event.relative:
        p0 = p0 + uav.p
    if event.v0 is not None:
        return p0, np.asarray(event.v0, dtype=float)

    g = np.asarray(params.g_vec)
    target = uav.p.copy()
    flight = 0.0
    for _ in range(AIM_ITERATIONS):
        flight = max(float(np.linalg.norm(target - p0)) / event.speed, 1e-3)
        target = uav.p + uav.v * flight
    v0 = (target - p0) / flight - 0.5 * g * flight
    return p0, v0


class OnboardNode:
    def __init__(self, cfg: ScenarioConfig, initial_state: UavState, bus: Optional[MessageBus] = None):
        self.cfg = cfg
        self.params = cfg.uav
        self.state = initial_state
        self.bus = bus or MessageBus('onboard')
        u_hover = cfg.u_hover or (self.params.gravity, 0.0, 0.0)
        self.command = ControlInput(*u_hover)
        self.command_sent_at: Optional[float] = None
        self.filter = StalenessFilter()
        self.monitor = SafetyMonitor(cfg.safety, 'onboard')
        self.pending_launches: List[Tuple[int, LaunchEvent]] = sorted(enumerate(cfg.launches),
                                                                      key=lambda item: item[1].t)
        self.obstacles: List[ObstacleState] = []
        self.applied = self.command

    def publish_odometry(self, now: float) -> List[TimestampedMessage]:
        out = [self.bus.stamp(UavOdometry.from_state(self.state), now)]
        for obstacle in self.obstacles:
            out.append(self.bus.stamp(ObstacleOdometry.from_state(obstacle), now))
        return out

    def receive(self, messages: List[TimestampedMessage], echo: bool = True) -> List[TimestampedMessage]:
        """Take delivered commands; returns echoes stamped at each command's arrival."""
        echoes = []
        for msg in messages:
            if not isinstance(msg.payload, ControlCommand):
                continue
            arrived = msg.received_at if msg.received_at is not None else msg.sent_at
            if echo:
                echoes.append(self.bus.stamp(CommandEcho.of(msg.payload), arrived, echo_of=msg.sent_at))
            if not self.filter.accept(msg):
                continue
            self.command = msg.payload.to_input()
            self.command_sent_at = msg.sent_at
            self.monitor.heard(arrived)
        return echoes

    def launch_due(self, now: float):
        while self.pending_launches and self.pending_launches[0][1].t <= now + 1e-12:
            index, event = self.pending_launches.pop(0)
            p0, v0 = aim_launch(event, self.state, self.params)
            self.obstacles.append(ObstacleState(p0, v0, event.r_d, now, index))
            logger.info(f"Launched obstacle {index} at t={now:.3f}s from {np.round(p0, 3)} "
                        f"with velocity {np.round(v0, 3)}")

    def control(self, now: float) -> ControlInput:
        state = self.monitor.update(now, grace=self.command_sent_at is None)
        if state == LinkState.HOLD:
            return hover_in_place(self.state, self.params, self.cfg.bounds, self.cfg.safety)
        return self.command

    def integrate(self, dt: float, now: float) -> UavState:
        self.applied = self.control(now)
        self.state = step_uav(self.state, self.applied, self.params, dt)
        survivors = []
        for obstacle in self.obstacles:
            moved = step_obstacle(obstacle, self.params, dt)
            if moved.p_o[2] >= 0:
                survivors.append(moved)
            else:
                logger.debug(f"Obstacle {obstacle.obstacle_id} reached the ground at t={moved.t:.3f}s")
        self.obstacles = survivors
        return self.state

    def nearest_obstacle(self) -> Tuple[Optional[ObstacleState], float]:
        best, best_distance = None, math.inf
        for obstacle in self.obstacles:
            distance = float(np.linalg.norm(obstacle.p_o - self.state.p))
            if distance < best_distance:
                best, best_distance = obstacle, distance
        return best, best_distance
