"""Scenario configuration: pydantic models plus the INI loader.

A config file is a set of INI sections. Vector values are written as
comma-separated numbers, e.g. `Q_x = 8, 8, 20, 1, 1, 1, 2, 2`.

    [scenario]      scenario, duration_s, control_rate_hz, horizon, seed, ...
    [uav]           UavParams fields
    [weights]       McpWeights fields
    [bounds]        McpBounds fields
    [solver]        SolverSettings fields
    [predictor]     PredictorSettings fields
    [reference]     ReferenceSpec fields, plus waypoint_file
    [delay]         closed-loop delay model, split over both links
    [delay.down]    absolute override for the command link
    [delay.up]      absolute override for the odometry/echo link
    [safety]        SafetySettings fields
    [launch.N]      one LaunchEvent per section
    [output]        out_dir, transient_s
"""
import configparser
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from model.core.dynamics import UavParams
from model.core.errors import ConfigError
from model.core.nmpc import McpBounds, McpWeights
from model.core.predictor import PredictorSettings
from model.core.solver import SolverSettings
from model.core.trajectory import ReferenceSpec, load_waypoints

Vec3 = Tuple[float, float, float]

SCENARIOS = ('track', 'track_no_estimator', 'obstacle')


class DelayModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['constant', 'sinusoidal', 'random_walk', 'trace'] = 'random_walk'
    base: float = Field(0.067, ge=0)
    amplitude: float = Field(0.02, ge=0)
    period_s: float = Field(10.0, gt=0)
    step: float = Field(0.003, ge=0)
    step_interval: float = Field(1.0 / 30.0, gt=0)
    reversion: float = Field(0.5, ge=0, le=1)
    lower: float = Field(0.040, ge=0)
    upper: float = Field(0.100, ge=0)
    max_delay: float = Field(0.5, gt=0)
    scale: float = Field(1.0, ge=0)
    seed: int = 0
    trace_path: Optional[str] = None
    loss_probability: float = Field(0.0, ge=0, le=1)

    @model_validator(mode='after')
    def _consistent(self):
        if self.lower > self.upper:
            raise ValueError(f"random-walk lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.kind == 'trace' and not self.trace_path:
            raise ValueError("a trace delay model needs trace_path")
        return self

    def scaled(self, share: float, seed_offset: int = 0) -> 'DelayModelConfig':
        return self.model_copy(update={'scale': self.scale * share, 'seed': self.seed + seed_offset})

    @property
    def nominal_mean(self) -> float:
        if self.kind == 'random_walk':
            return self.scale * min(max(self.base, self.lower), self.upper)
        return self.scale * self.base


class LaunchEvent(BaseModel):
    """An obstacle thrown at the vehicle; with no v0 it is aimed at where the vehicle will be."""
    model_config = ConfigDict(frozen=True)

    t: float = Field(..., ge=0)
    p0: Vec3
    v0: Optional[Vec3] = None
    relative: bool = False
    speed: float = Field(4.0, gt=0)
    r_d: float = Field(0.15, gt=0)
    r_s: float = Field(0.3, gt=0)


class SafetySettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    enabled: bool = True
    timeout_s: float = Field(0.5, gt=0)
    hold_velocity_gain: float = Field(1.0, ge=0)
    hold_tilt_gain: float = Field(0.2, ge=0)
    # leaving hold needs a message at most this old; None resumes at timeout_s
    resume_s: Optional[float] = Field(None, gt=0)
    # vehicle safety radius for obstacles not tied to a scripted launch
    safety_radius: float = Field(0.3, gt=0)

    @model_validator(mode='after')
    def _consistent(self):
        if self.resume_s is not None and self.resume_s > self.timeout_s:
            raise ValueError(f"resume_s {self.resume_s} exceeds timeout_s {self.timeout_s}")
        return self

    @property
    def resume_age(self) -> float:
        return self.timeout_s if self.resume_s is None else self.resume_s


class TunnelSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    bind: Tuple[str, int] = ('127.0.0.1', 9870)
    peer: Tuple[str, int] = ('127.0.0.1', 9871)
    echo: bool = True
    heartbeat_interval: float = Field(1.0, gt=0)
    link_timeout: float = Field(0.5, gt=0)
    stats_interval: float = Field(1.0, gt=0)
    recv_buffer: int = Field(2048, ge=64)
    inject: Optional[DelayModelConfig] = None


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario: Literal['track', 'track_no_estimator', 'obstacle'] = 'track'
    duration_s: float = Field(120.0, gt=0)
    control_rate_hz: float = Field(30.0, gt=0)
    horizon: int = Field(60, ge=1)
    substeps: int = Field(4, ge=1)
    seed: int = 42

    uav: UavParams = UavParams()
    weights: McpWeights = McpWeights()
    bounds: McpBounds = McpBounds()
    solver: SolverSettings = SolverSettings()
    predictor: PredictorSettings = PredictorSettings()
    reference: ReferenceSpec = ReferenceSpec()
    u_hover: Optional[Vec3] = None

    delay: DelayModelConfig = DelayModelConfig()
    downlink_share: float = Field(0.5, ge=0, le=1)
    delay_down: Optional[DelayModelConfig] = None
    delay_up: Optional[DelayModelConfig] = None
    blackouts: List[Tuple[float, float]] = Field(default_factory=list)
    estimator_window: Optional[int] = Field(None, ge=1)
    solver_latency_s: float = Field(0.0, ge=0)

    launches: List[LaunchEvent] = Field(default_factory=list)
    obstacle_timeout_s: float = Field(0.5, gt=0)
    safety: SafetySettings = SafetySettings()

    initial_position: Optional[Vec3] = None
    out_dir: str = 'runs'
    transient_s: float = Field(3.0, ge=0)

    @model_validator(mode='after')
    def _consistent(self):
        if self.scenario == 'obstacle' and not self.launches:
            raise ValueError("the obstacle scenario needs at least one launch event")
        for start, end in self.blackouts:
            if end <= start:
                raise ValueError(f"blackout window ({start}, {end}) is empty")
        return self

    @property
    def Ts(self) -> float:
        return 1.0 / self.control_rate_hz

    @property
    def use_estimator(self) -> bool:
        return self.scenario != 'track_no_estimator'

    @property
    def steps(self) -> int:
        return int(round(self.duration_s * self.control_rate_hz))

    def reference_spec(self) -> ReferenceSpec:
        return self.reference.model_copy(update={'Ts': self.Ts})

    def link_models(self) -> Tuple[DelayModelConfig, DelayModelConfig]:
        """Independent delay models for the command link and the odometry/echo link, seeded from `seed`."""
        offset = 2 * self.seed
        down = self.delay_down.scaled(1.0, offset) if self.delay_down else self.delay.scaled(self.downlink_share, offset)
        up = self.delay_up.scaled(1.0, offset + 1) if self.delay_up else self.delay.scaled(1.0 - self.downlink_share, offset + 1)
        return down, up

    def with_overrides(self, **overrides) -> 'ScenarioConfig':
        update = {k: v for k, v in overrides.items() if v is not None}
        if not update:
            return self
        return validate_config({**self.model_dump(), **update})


def validate_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario configuration: {e}") from e


_NUMBER = re.compile(r'^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$')
_INTEGER = re.compile(r'^[+-]?\d+$')


def parse_value(raw: str):
    text = raw.strip()
    if ',' in text:
        return [parse_value(part) for part in text.split(',') if part.strip()]
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', ''):
        return None
    if _INTEGER.match(text):
        return int(text)
    if _NUMBER.match(text):
        return float(text)
    return text


SECTION_FIELDS = {
    'uav': 'uav',
    'weights': 'weights',
    'bounds': 'bounds',
    'solver': 'solver',
    'predictor': 'predictor',
    'reference': 'reference',
    'delay': 'delay',
    'delay.down': 'delay_down',
    'delay.up': 'delay_up',
    'safety': 'safety',
}


def _section_dict(parser: configparser.ConfigParser, section: str) -> Dict[str, object]:
    return {key: parse_value(value) for key, value in parser.items(section)}


def _as_pairs(value) -> List[Tuple[float, float]]:
    flat = value if isinstance(value, list) else [value]
    if len(flat) % 2:
        raise ConfigError(f"blackouts need start,end pairs, got {value}")
    return [(float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2)]


def config_from_ini(text: str, base_dir: Optional[Path] = None) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Unreadable config: {e}") from e

    data: Dict[str, object] = {}
    launches = []
    for section in parser.sections():
        values = _section_dict(parser, section)
        if section in ('scenario', 'output'):
            data.update(values)
        elif section in SECTION_FIELDS:
            data[SECTION_FIELDS[section]] = values
        elif section.startswith('launch.'):
            launches.append((section, values))
        else:
            raise ConfigError(f"Unknown config section [{section}]")

    if launches:
        launches.sort(key=lambda item: int(item[0].split('.', 1)[1]) if item[0].split('.', 1)[1].isdigit() else 0)
        data['launches'] = [values for _, values in launches]

    if 'blackouts' in data:
        data['blackouts'] = _as_pairs(data['blackouts'])

    reference = data.get('reference')
    if isinstance(reference, dict) and reference.get('waypoint_file'):
        path = Path(str(reference.pop('waypoint_file')))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            reference['waypoints'] = load_waypoints(path)
        except (OSError, ValueError) as e:
            raise ConfigError(f"Could not load waypoints from {path}: {e}") from e
        reference.setdefault('kind', 'waypoints')

    for key in ('delay', 'delay_down', 'delay_up'):
        section = data.get(key)
        if isinstance(section, dict) and section.get('trace_path') and base_dir is not None:
            path = Path(str(section['trace_path']))
            if not path.is_absolute():
                section['trace_path'] = str(base_dir / path)

    return validate_config(data)


def load_config(path: Optional[str] = None, **overrides) -> ScenarioConfig:
    if path is None:
        cfg = validate_config({})
    else:
        file_path = Path(path)
        try:
            text = file_path.read_text()
        except OSError as e:
            raise ConfigError(f"Could not read config {path}: {e}") from e
        cfg = config_from_ini(text, file_path.parent)
    return cfg.with_overrides(**overrides)
