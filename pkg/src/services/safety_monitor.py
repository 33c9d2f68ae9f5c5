import logging
from enum import Enum
from typing import Optional

from model.core.dynamics import ControlInput, UavParams, UavState
from model.core.nmpc import McpBounds
from src.schemas.config_schemas import SafetySettings

logger = logging.getLogger('safety_monitor')


class LinkState(str, Enum):
    NORMAL = 'normal'
    HOLD = 'hold'


def safety_monitor(link_state: LinkState, last_msg_age: Optional[float], cfg: SafetySettings) -> LinkState:
    """Hold when the newest message from the other side is older than the timeout; None means nothing received yet.

    Once holding, the link must be fresher than `cfg.resume_age` before control is handed back.
    """
    if not cfg.enabled:
        return LinkState.NORMAL
    limit = cfg.resume_age if link_state == LinkState.HOLD else cfg.timeout_s
    if last_msg_age is None or last_msg_age > limit:
        return LinkState.HOLD
    return LinkState.NORMAL


def hover_in_place(s: UavState, params: UavParams, bounds: McpBounds, cfg: SafetySettings) -> ControlInput:
    """Level out and bleed off velocity using onboard state only."""
    thrust = params.gravity - cfg.hold_velocity_gain * s.v[2]
    theta_d = -cfg.hold_tilt_gain * s.v[0]
    phi_d = cfg.hold_tilt_gain * s.v[1]
    lo, hi = bounds.u_min, bounds.u_max
    return ControlInput(
        min(max(float(thrust), lo[0]), hi[0]),
        min(max(float(phi_d), lo[1]), hi[1]),
        min(max(float(theta_d), lo[2]), hi[2]),
    )


class SafetyMonitor:
    """Tracks link freshness and logs normal/hold transitions."""

    def __init__(self, cfg: SafetySettings, name: str = 'onboard'):
        self.cfg = cfg
        self.name = name
        self.state = LinkState.NORMAL
        self.last_heard: Optional[float] = None
        self.transitions = []

    def heard(self, at: float):
        if self.last_heard is None or at > self.last_heard:
            self.last_heard = at

    def update(self, now: float, grace: bool = False) -> LinkState:
        age = None if self.last_heard is None else now - self.last_heard
        # nothing heard yet counts as normal while the first messages are in flight
        if age is None and grace:
            new_state = LinkState.NORMAL
        else:
            new_state = safety_monitor(self.state, age, self.cfg)
        if new_state != self.state:
            self.transitions.append((now, new_state))
            if new_state == LinkState.HOLD:
                logger.warning(f"{self.name}: link silent for {age if age is not None else float('inf'):.3f}s "
                               f"at t={now:.3f}s, holding position")
            else:
                logger.info(f"{self.name}: link restored at t={now:.3f}s")
        self.state = new_state
        return new_state
