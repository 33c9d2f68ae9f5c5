import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from model.core.dynamics import STATE_SIZE

Waypoint = Tuple[float, float, float, float]


class ReferenceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['circle', 'hover', 'waypoints'] = 'circle'
    radius: float = Field(1.0, gt=0)
    divisor: float = Field(600.0, gt=0)
    altitude: float = Field(0.8, gt=0)
    hover_point: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    waypoints: List[Waypoint] = Field(default_factory=list)
    Ts: float = Field(1.0 / 30.0, gt=0)
    zero_velocity: bool = False

    @field_validator('waypoints')
    @classmethod
    def _times_increasing(cls, value):
        times = [w[0] for w in value]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        return value

    @model_validator(mode='after')
    def _waypoints_present(self):
        if self.kind == 'waypoints' and not self.waypoints:
            raise ValueError("a waypoint reference needs at least one waypoint")
        return self


def load_waypoints(path) -> List[Waypoint]:
    frame = pd.read_csv(Path(path))
    missing = {'time_s', 'x', 'y', 'z'} - set(frame.columns)
    if missing:
        raise ValueError(f"waypoint file {path} is missing columns {sorted(missing)}")
    return [tuple(float(v) for v in row) for row in frame[['time_s', 'x', 'y', 'z']].to_numpy()]


def _waypoint_reference(waypoints: List[Waypoint], t: float):
    times = [w[0] for w in waypoints]
    if t <= times[0]:
        return np.array(waypoints[0][1:]), np.zeros(3)
    if t >= times[-1]:
        return np.array(waypoints[-1][1:]), np.zeros(3)
    i = int(np.searchsorted(times, t, side='right')) - 1
    t0, *a = waypoints[i]
    t1, *b = waypoints[i + 1]
    a, b = np.array(a), np.array(b)
    slope = (b - a) / (t1 - t0)
    return a + slope * (t - t0), slope


def reference_at(spec: ReferenceSpec, k: int) -> np.ndarray:
    """Reference state [p, v, phi, theta] at controller step k; attitude references are zero."""
    if k < 0:
        raise ValueError(f"step index must be non-negative, got {k}")
    ref = np.zeros(STATE_SIZE)
    if spec.kind == 'circle':
        angle = k / spec.divisor
        ref[0:3] = (spec.radius * math.sin(angle), spec.radius * math.cos(angle), spec.altitude)
        # d/dt of the per-step parametrization, with k = t / Ts
        rate = spec.radius / (spec.divisor * spec.Ts)
        ref[3:6] = (rate * math.cos(angle), -rate * math.sin(angle), 0.0)
    elif spec.kind == 'hover':
        ref[0:3] = spec.hover_point
    else:
        position, velocity = _waypoint_reference(spec.waypoints, k * spec.Ts)
        ref[0:3] = position
        ref[3:6] = velocity
    if spec.zero_velocity:
        ref[3:6] = 0.0
    return ref


def reference_window(spec: ReferenceSpec, k: int, N: int) -> np.ndarray:
    if N < 1:
        raise ValueError(f"horizon must be at least 1, got {N}")
    return np.stack([reference_at(spec, k + j) for j in range(N + 1)])


def spec_with_waypoint_file(spec: ReferenceSpec, path: Optional[str]) -> ReferenceSpec:
    if not path:
        return spec
    return spec.model_copy(update={'kind': 'waypoints', 'waypoints': load_waypoints(path)})
