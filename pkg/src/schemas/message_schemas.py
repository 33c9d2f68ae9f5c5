from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from model.core.dynamics import ControlInput, ObstacleState, UavState

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class ControlCommand:
    F: float
    phi_d: float
    theta_d: float

    @classmethod
    def from_input(cls, u: ControlInput) -> 'ControlCommand':
        return cls(u.F, u.phi_d, u.theta_d)

    def to_input(self) -> ControlInput:
        return ControlInput(self.F, self.phi_d, self.theta_d)

    def values(self) -> Tuple[float, ...]:
        return (self.F, self.phi_d, self.theta_d)


@dataclass(frozen=True)
class UavOdometry:
    p: Vec3
    v: Vec3
    phi: float
    theta: float

    @classmethod
    def from_state(cls, s: UavState) -> 'UavOdometry':
        return cls(tuple(float(x) for x in s.p), tuple(float(x) for x in s.v), float(s.phi), float(s.theta))

    def to_state(self, t: float) -> UavState:
        return UavState.from_vector(self.values(), t)

    def values(self) -> Tuple[float, ...]:
        return (*self.p, *self.v, self.phi, self.theta)


@dataclass(frozen=True)
class ObstacleOdometry:
    p_o: Vec3
    v_o: Vec3
    r_d: float = 0.2
    obstacle_id: int = 0

    @classmethod
    def from_state(cls, o: ObstacleState) -> 'ObstacleOdometry':
        return cls(tuple(float(x) for x in o.p_o), tuple(float(x) for x in o.v_o), o.r_d, o.obstacle_id)

    def to_state(self, t: float) -> ObstacleState:
        return ObstacleState(np.array(self.p_o), np.array(self.v_o), self.r_d, t, self.obstacle_id)

    def values(self) -> Tuple[float, ...]:
        return (*self.p_o, *self.v_o)


@dataclass(frozen=True)
class CommandEcho:
    """The applied command looped back; the envelope's echo_of carries its original timestamp."""
    F: float
    phi_d: float
    theta_d: float

    @classmethod
    def of(cls, command: ControlCommand) -> 'CommandEcho':
        return cls(command.F, command.phi_d, command.theta_d)

    def values(self) -> Tuple[float, ...]:
        return (self.F, self.phi_d, self.theta_d)


@dataclass(frozen=True)
class Heartbeat:
    def values(self) -> Tuple[float, ...]:
        return ()


Payload = Union[ControlCommand, UavOdometry, ObstacleOdometry, CommandEcho, Heartbeat]


@dataclass(frozen=True)
class TimestampedMessage:
    seq: int
    sent_at: float
    payload: Payload
    echo_of: Optional[float] = None
    received_at: Optional[float] = None

    @property
    def stream(self):
        """Key under which staleness is judged: one stream per payload kind, per obstacle."""
        if isinstance(self.payload, ObstacleOdometry):
            return ('obstacle', self.payload.obstacle_id)
        return (type(self.payload).__name__,)
