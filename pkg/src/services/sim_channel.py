"""Delay-injecting message channels driven by a virtual clock.

Channels never read wall time: the harness advances a VirtualClock and
passes `now` explicitly. Each message is released after a delay sampled from
the channel's DelayModel at send time. Delivery is release-time ordered, so
a falling delay can reorder messages; receivers resolve that with a
StalenessFilter.
"""
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from model.core.errors import ChannelClosedError, ConfigError
from src.schemas.config_schemas import DelayModelConfig
from src.schemas.message_schemas import TimestampedMessage

logger = logging.getLogger('sim_channel')


class VirtualClock:
    """Integer-tick clock; time is always `ticks * resolution`, so it never drifts."""

    def __init__(self, resolution: float):
        if not resolution > 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        self.resolution = resolution
        self.ticks = 0

    def now(self) -> float:
        return self.ticks * self.resolution

    def time_at(self, ticks: int) -> float:
        return ticks * self.resolution

    def advance(self, ticks: int = 1) -> float:
        if ticks < 0:
            raise ValueError("virtual time cannot run backwards")
        self.ticks += ticks
        return self.now()

    def reset(self):
        self.ticks = 0


def load_trace(path) -> Tuple[np.ndarray, np.ndarray]:
    try:
        frame = pd.read_csv(Path(path), sep=r'\s+', header=None, names=['time_s', 'delay_s'],
                            comment='#', engine='python')
    except (OSError, ValueError) as e:
        raise ConfigError(f"Could not read delay trace {path}: {e}") from e
    if frame.empty:
        raise ConfigError(f"Delay trace {path} is empty")
    times = frame['time_s'].to_numpy(dtype=float)
    delays = frame['delay_s'].to_numpy(dtype=float)
    if np.any(np.diff(times) < 0):
        raise ConfigError(f"Delay trace {path} times must be non-decreasing")
    if np.any(delays < 0) or not np.all(np.isfinite(delays)):
        raise ConfigError(f"Delay trace {path} contains negative or non-finite delays")
    return times, delays


class DelayModel:
    """Time-varying delay; sample(now) depends only on the configuration and `now`."""

    def __init__(self, config: DelayModelConfig):
        self.config = config
        self._walk: List[float] = []
        self._rng = np.random.default_rng(config.seed)
        self._trace = load_trace(config.trace_path) if config.kind == 'trace' else None

    def _walk_value(self, now: float) -> float:
        cfg = self.config
        index = max(0, int(math.floor(now / cfg.step_interval + 1e-9)))
        if not self._walk:
            self._walk.append(min(max(cfg.base, cfg.lower), cfg.upper))
        span = max(cfg.upper - cfg.lower, 1e-12)
        while len(self._walk) <= index:
            # steps lean back toward base so the long-run mean stays near it
            p_up = min(max(0.5 - cfg.reversion * (self._walk[-1] - cfg.base) / span, 0.0), 1.0)
            move = cfg.step if self._rng.random() < p_up else -cfg.step
            self._walk.append(min(max(self._walk[-1] + move, cfg.lower), cfg.upper))
        return self._walk[index]

    def _raw(self, now: float) -> float:
        cfg = self.config
        if cfg.kind == 'constant':
            return cfg.base
        if cfg.kind == 'sinusoidal':
            return cfg.base + cfg.amplitude * math.sin(2.0 * math.pi * now / cfg.period_s)
        if cfg.kind == 'random_walk':
            return self._walk_value(now)
        times, delays = self._trace
        i = int(np.searchsorted(times, now, side='right')) - 1
        return float(delays[max(i, 0)])

    def sample(self, now: float) -> float:
        delay = self.config.scale * self._raw(now)
        return min(max(delay, 0.0), self.config.max_delay)


def staleness_filter(latest_seen_sent_at: Optional[float], incoming: TimestampedMessage) -> Tuple[bool, Optional[float]]:
    """Keep iff the message is strictly newer than anything seen; returns (keep, new latest)."""
    if latest_seen_sent_at is None or incoming.sent_at > latest_seen_sent_at:
        return True, incoming.sent_at
    return False, latest_seen_sent_at


class StalenessFilter:
    """Per-stream staleness state for one receiver."""

    def __init__(self):
        self.latest: Dict[Hashable, float] = {}
        self.dropped = 0

    def accept(self, msg: TimestampedMessage, stream: Optional[Hashable] = None) -> bool:
        key = msg.stream if stream is None else stream
        keep, latest = staleness_filter(self.latest.get(key), msg)
        if keep:
            self.latest[key] = latest
        else:
            self.dropped += 1
            logger.debug(f"Dropped stale {key} message seq={msg.seq} sent_at={msg.sent_at:.4f}")
        return keep

    def filter(self, messages: Sequence[TimestampedMessage]) -> List[TimestampedMessage]:
        return [m for m in messages if self.accept(m)]


@dataclass(order=True)
class _Pending:
    release: float
    seq: int
    order: int
    message: TimestampedMessage = field(compare=False)


class SimChannel:
    """One direction of the loop; single-threaded, owned by the simulation loop."""

    def __init__(self, model: DelayModel, name: str = 'channel',
                 blackouts: Sequence[Tuple[float, float]] = ()):
        self.model = model
        self.name = name
        self.blackouts = list(blackouts)
        self._queue: List[_Pending] = []
        self._order = 0
        self._loss_rng = np.random.default_rng(model.config.seed + 7919)
        self.closed = False
        self.sent = 0
        self.delivered = 0
        self.lost = 0

    @property
    def pending(self) -> int:
        return len(self._queue)

    def _dropped(self, now: float) -> bool:
        if any(start <= now < end for start, end in self.blackouts):
            return True
        p = self.model.config.loss_probability
        return p > 0 and self._loss_rng.random() < p

    def send(self, msg: TimestampedMessage, now: float):
        if self.closed:
            raise ChannelClosedError(f"{self.name} is closed")
        if now < msg.sent_at:
            raise ValueError(f"{self.name}: cannot send at {now} a message stamped {msg.sent_at}")
        self.sent += 1
        if self._dropped(now):
            self.lost += 1
            return
        release = now + self.model.sample(now)
        heapq.heappush(self._queue, _Pending(release, msg.seq, self._order, msg))
        self._order += 1

    def poll(self, now: float) -> List[TimestampedMessage]:
        out = []
        while self._queue and self._queue[0].release <= now:
            item = heapq.heappop(self._queue)
            out.append(replace(item.message, received_at=item.release))
        self.delivered += len(out)
        return out

    def close(self):
        self.closed = True
        if self._queue:
            logger.info(f"{self.name} closed with {len(self._queue)} undelivered messages")


def make_channels(down: DelayModelConfig, up: DelayModelConfig,
                  blackouts: Sequence[Tuple[float, float]] = ()) -> Tuple[SimChannel, SimChannel]:
    return (SimChannel(DelayModel(down), 'downlink', blackouts),
            SimChannel(DelayModel(up), 'uplink', blackouts))
