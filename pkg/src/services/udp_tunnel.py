"""UDP tunnel between the edge controller and the onboard node.

Wire layout, little-endian throughout:

    magic      4s   b"PC5G"
    version    B    1
    msg_type   B    1=ControlCommand 2=UavOdometry 3=ObstacleOdometry 4=CommandEcho 5=Heartbeat
    seq        I    per-type counter of the sending endpoint
    sent_at_us Q    sender's monotonic clock, microseconds
    length     H    payload bytes
    payload         float64 values; CommandEcho appends the echoed sent_at_us as u64

Each endpoint runs a reader and a writer thread. The application talks to
them only through its MessageBus queues.
"""
import heapq
import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

from model.core.errors import (
    BadLengthError,
    BadMagicError,
    BadVersionError,
    DecodeError,
    OversizedPayloadError,
    UnknownTypeError,
)
from src.schemas.config_schemas import TunnelSettings
from src.schemas.metrics_schemas import TunnelStatsResponse
from src.schemas.message_schemas import (
    CommandEcho,
    ControlCommand,
    Heartbeat,
    ObstacleOdometry,
    Payload,
    TimestampedMessage,
    UavOdometry,
)
from src.services.delay_estimator import DelayEstimator
from src.services.message_bus import OUTBOUND, MessageBus
from src.services.sim_channel import DelayModel, StalenessFilter

logger = logging.getLogger('udp_tunnel')

MAGIC = b'PC5G'
VERSION = 1
HEADER = struct.Struct('<4sBBIQH')
HEADER_SIZE = HEADER.size
ECHO_STAMP = struct.Struct('<Q')
MAX_PAYLOAD = 0xFFFF
SEQ_MODULUS = 1 << 32


class MsgType(IntEnum):
    CONTROL_COMMAND = 1
    UAV_ODOMETRY = 2
    OBSTACLE_ODOMETRY = 3
    COMMAND_ECHO = 4
    HEARTBEAT = 5


PAYLOAD_SIZES = {
    MsgType.CONTROL_COMMAND: 24,
    MsgType.UAV_ODOMETRY: 64,
    MsgType.OBSTACLE_ODOMETRY: 48,
    MsgType.COMMAND_ECHO: 32,
    MsgType.HEARTBEAT: 0,
}

PAYLOAD_TYPES = {
    ControlCommand: MsgType.CONTROL_COMMAND,
    UavOdometry: MsgType.UAV_ODOMETRY,
    ObstacleOdometry: MsgType.OBSTACLE_ODOMETRY,
    CommandEcho: MsgType.COMMAND_ECHO,
    Heartbeat: MsgType.HEARTBEAT,
}


@dataclass(frozen=True)
class Datagram:
    msg_type: MsgType
    seq: int
    sent_at_us: int
    payload: Payload
    echo_of_us: Optional[int] = None

    def to_message(self, received_at: Optional[float] = None) -> TimestampedMessage:
        echo_of = self.echo_of_us / 1e6 if self.echo_of_us is not None else None
        return TimestampedMessage(self.seq, self.sent_at_us / 1e6, self.payload, echo_of, received_at)


def now_us() -> int:
    return time.monotonic_ns() // 1000


def monotonic_seconds() -> float:
    """The clock every tunnel timestamp is taken from, in seconds."""
    return now_us() / 1e6


def encode(msg: Payload, seq: int, sent_at_us: int, echo_of_us: int = 0) -> bytes:
    try:
        msg_type = PAYLOAD_TYPES[type(msg)]
    except KeyError:
        raise OversizedPayloadError(f"no wire schema for {type(msg).__name__}")
    values = msg.values()
    payload = struct.pack(f'<{len(values)}d', *values)
    if msg_type == MsgType.COMMAND_ECHO:
        payload += ECHO_STAMP.pack(echo_of_us)
    if len(payload) != PAYLOAD_SIZES[msg_type] or len(payload) > MAX_PAYLOAD:
        raise OversizedPayloadError(
            f"{msg_type.name} payload is {len(payload)} bytes, schema needs {PAYLOAD_SIZES[msg_type]}")
    if not (0 <= seq < SEQ_MODULUS and 0 <= sent_at_us < (1 << 64)):
        raise OversizedPayloadError(f"seq {seq} or timestamp {sent_at_us} does not fit the header")
    return HEADER.pack(MAGIC, VERSION, int(msg_type), seq, sent_at_us, len(payload)) + payload


def _payload_from(msg_type: MsgType, body: bytes):
    if msg_type == MsgType.HEARTBEAT:
        return Heartbeat(), None
    if msg_type == MsgType.COMMAND_ECHO:
        f, phi_d, theta_d = struct.unpack_from('<3d', body)
        (echo_of_us,) = ECHO_STAMP.unpack_from(body, 24)
        return CommandEcho(f, phi_d, theta_d), echo_of_us
    values = struct.unpack(f'<{len(body) // 8}d', body)
    if msg_type == MsgType.CONTROL_COMMAND:
        return ControlCommand(*values), None
    if msg_type == MsgType.UAV_ODOMETRY:
        return UavOdometry(tuple(values[0:3]), tuple(values[3:6]), values[6], values[7]), None
    return ObstacleOdometry(tuple(values[0:3]), tuple(values[3:6])), None


def decode(data: bytes) -> Datagram:
    if len(data) < HEADER_SIZE:
        raise BadLengthError(f"datagram of {len(data)} bytes is shorter than the header")
    magic, version, raw_type, seq, sent_at_us, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}")
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise UnknownTypeError(f"unknown message type {raw_type}")
    if len(data) != HEADER_SIZE + length or length != PAYLOAD_SIZES[msg_type]:
        raise BadLengthError(f"{msg_type.name} with length field {length} in a {len(data)}-byte datagram")
    payload, echo_of_us = _payload_from(msg_type, bytes(data[HEADER_SIZE:]))
    return Datagram(msg_type, seq, sent_at_us, payload, echo_of_us)


@dataclass(frozen=True)
class EchoRequest:
    command: ControlCommand
    echo_of_us: int


@dataclass
class TunnelStats:
    sent: int = 0
    received: int = 0
    dropped_stale: int = 0
    decode_errors: int = 0
    echoes: int = 0
    heartbeats: int = 0
    socket_errors: int = 0


STATS_HEADER = 'time_s,rtt_est_s,sent,received,dropped_stale,decode_errors'


class TunnelEndpoint:
    """One side of the tunnel.

    The server forwards edge messages (commands) and receives odometry and
    echoes; the client forwards onboard messages and, with echo enabled,
    returns every received command as a CommandEcho carrying its original
    sent_at_us.
    """

    def __init__(self, role: str, settings: TunnelSettings, bus: MessageBus,
                 sock: Optional[socket.socket] = None):
        if role not in ('server', 'client'):
            raise ValueError(f"role must be server or client, got {role}")
        self.role = role
        self.settings = settings
        self.bus = bus
        self.echo = settings.echo and role == 'client'
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if sock is None:
            self.sock.bind(tuple(settings.bind))
        self.sock.settimeout(0.05)
        self.peer = tuple(settings.peer)

        self.stats = TunnelStats()
        self.estimator = DelayEstimator()
        self.filter = StalenessFilter()
        self.injector = DelayModel(settings.inject) if settings.inject is not None else None
        self.shutdown_event = threading.Event()
        self._seq: Dict[MsgType, int] = {t: 0 for t in MsgType}
        self._held: List[Tuple[float, int, bytes]] = []
        self._held_order = 0
        self._started_at = monotonic_seconds()
        self._last_sent = self._started_at
        self._last_heard: Optional[float] = None
        self._threads: List[threading.Thread] = []

    @property
    def address(self):
        return self.sock.getsockname()

    def start(self):
        self._threads = [
            threading.Thread(target=self._read_loop, name=f'tunnel-{self.role}-read', daemon=True),
            threading.Thread(target=self._write_loop, name=f'tunnel-{self.role}-write', daemon=True),
        ]
        for thread in self._threads:
            thread.start()
        logger.info(f"Tunnel {self.role} bound to {self.address}, peer {self.peer}, echo={self.echo}")

    def stop(self, timeout: float = 2.0):
        self.shutdown_event.set()
        for thread in self._threads:
            thread.join(timeout)
        self.sock.close()
        logger.info(f"Tunnel {self.role} stopped: {self.stats}")

    def link_degraded(self, now: Optional[float] = None) -> bool:
        now = monotonic_seconds() if now is None else now
        last = self._last_heard if self._last_heard is not None else self._started_at
        return now - last > self.settings.link_timeout

    def stats_snapshot(self, now: Optional[float] = None) -> TunnelStatsResponse:
        now = monotonic_seconds() if now is None else now
        s = self.stats
        return TunnelStatsResponse(time_s=now - self._started_at, rtt_est_s=self.estimator.tau_hat, sent=s.sent,
                                   received=s.received, dropped_stale=s.dropped_stale,
                                   decode_errors=s.decode_errors)

    def stats_line(self, now: Optional[float] = None) -> str:
        s = self.stats_snapshot(now)
        return f"{s.time_s:.3f},{s.rtt_est_s:.6f},{s.sent},{s.received},{s.dropped_stale},{s.decode_errors}"

    def _next_seq(self, msg_type: MsgType) -> int:
        seq = self._seq[msg_type]
        self._seq[msg_type] = (seq + 1) % SEQ_MODULUS
        return seq

    def _transmit(self, data: bytes):
        backoff = 0.01
        while not self.shutdown_event.is_set():
            try:
                self.sock.sendto(data, self.peer)
                self.stats.sent += 1
                self._last_sent = monotonic_seconds()
                return
            except OSError as e:
                self.stats.socket_errors += 1
                logger.warning(f"Tunnel {self.role} send failed ({str(e)}), retrying in {backoff:.2f}s")
                self.shutdown_event.wait(backoff)
                backoff = min(backoff * 2, 1.0)

    def _send(self, data: bytes):
        if self.injector is None:
            self._transmit(data)
            return
        now = monotonic_seconds()
        release = now + self.injector.sample(now - self._started_at)
        heapq.heappush(self._held, (release, self._held_order, data))
        self._held_order += 1

    def _encode_item(self, item) -> bytes:
        if isinstance(item, EchoRequest):
            self.stats.echoes += 1
            return encode(CommandEcho.of(item.command), self._next_seq(MsgType.COMMAND_ECHO), now_us(),
                          item.echo_of_us)
        msg_type = PAYLOAD_TYPES[type(item.payload)]
        sent_at_us = int(round(item.sent_at * 1e6))
        echo_of_us = int(round(item.echo_of * 1e6)) if item.echo_of is not None else 0
        return encode(item.payload, self._next_seq(msg_type), sent_at_us, echo_of_us)

    def _write_loop(self):
        outgoing = self.bus.topic(OUTBOUND)
        interval = self.settings.heartbeat_interval
        while not self.shutdown_event.is_set():
            now = monotonic_seconds()
            while self._held and self._held[0][0] <= now:
                self._transmit(heapq.heappop(self._held)[2])
            if now - self._last_sent >= interval:
                self.stats.heartbeats += 1
                self._transmit(encode(Heartbeat(), self._next_seq(MsgType.HEARTBEAT), now_us()))
            wait = interval - (monotonic_seconds() - self._last_sent)
            if self._held:
                wait = min(wait, self._held[0][0] - monotonic_seconds())
            try:
                item = outgoing.get(timeout=min(max(wait, 0.0005), 0.05))
            except queue.Empty:
                continue
            try:
                self._send(self._encode_item(item))
            except OversizedPayloadError as e:
                logger.error(f"Tunnel {self.role} could not encode outgoing message: {str(e)}")

    def _read_loop(self):
        while not self.shutdown_event.is_set():
            try:
                data, _ = self.sock.recvfrom(self.settings.recv_buffer)
            except socket.timeout:
                continue
            except OSError as e:
                if self.shutdown_event.is_set():
                    return
                self.stats.socket_errors += 1
                logger.warning(f"Tunnel {self.role} receive failed: {str(e)}")
                self.shutdown_event.wait(0.05)
                continue
            self.handle_datagram(data, monotonic_seconds())

    def handle_datagram(self, data: bytes, received_at: float) -> Optional[TimestampedMessage]:
        try:
            datagram = decode(data)
        except DecodeError as e:
            self.stats.decode_errors += 1
            logger.debug(f"Tunnel {self.role} dropped undecodable datagram: {str(e)}")
            return None

        self._last_heard = received_at
        if datagram.msg_type == MsgType.HEARTBEAT:
            return None
        self.stats.received += 1

        msg = datagram.to_message(received_at)
        # echo before the staleness check
        if datagram.msg_type == MsgType.CONTROL_COMMAND and self.echo:
            self.bus.put(OUTBOUND, EchoRequest(datagram.payload, datagram.sent_at_us))
        if not self.filter.accept(msg, datagram.msg_type):
            self.stats.dropped_stale += 1
            return None

        if datagram.msg_type == MsgType.COMMAND_ECHO:
            self.estimator.record(msg.echo_of, received_at)
        self.bus.deliver(msg)
        return msg


def _run_endpoint(role: str, settings: TunnelSettings, bus: MessageBus,
                  stop_event: Optional[threading.Event] = None) -> TunnelEndpoint:
    endpoint = TunnelEndpoint(role, settings, bus)
    endpoint.start()
    if stop_event is not None:
        stop_event.wait()
        endpoint.stop()
    return endpoint


def run_server(bind_addr, peer_addr, bus: MessageBus, settings: Optional[TunnelSettings] = None,
               stop_event: Optional[threading.Event] = None) -> TunnelEndpoint:
    """Start the edge-side endpoint; blocks until stop_event is set when one is given."""
    base = settings or TunnelSettings()
    settings = base.model_copy(update={'bind': tuple(bind_addr), 'peer': tuple(peer_addr)})
    return _run_endpoint('server', settings, bus, stop_event)


def run_client(bind_addr, peer_addr, bus: MessageBus, echo: bool = True,
               settings: Optional[TunnelSettings] = None,
               stop_event: Optional[threading.Event] = None) -> TunnelEndpoint:
    base = settings or TunnelSettings()
    settings = base.model_copy(update={'bind': tuple(bind_addr), 'peer': tuple(peer_addr), 'echo': echo})
    return _run_endpoint('client', settings, bus, stop_event)


def parse_address(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(':')
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)
