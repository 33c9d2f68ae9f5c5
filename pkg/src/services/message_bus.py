import logging
import queue
import threading
from typing import Dict, List, Optional

from src.schemas.message_schemas import Payload, TimestampedMessage

logger = logging.getLogger('message_bus')

INBOUND = 'inbound'
OUTBOUND = 'outbound'


class MessageBus:
    """Topic queues between a node and its tunnel endpoint, plus the node's sequence counter.

    The queues are the only state shared between threads; each message is owned
    by whichever side last took it off a queue.
    """

    def __init__(self, sender: str = 'node', maxsize: int = 0):
        self.sender = sender
        self.maxsize = maxsize
        self.topics: Dict[str, queue.Queue] = {
            INBOUND: queue.Queue(maxsize),
            OUTBOUND: queue.Queue(maxsize),
        }
        self._seq = 0
        self._seq_lock = threading.Lock()
        self.dropped = 0

    def stamp(self, payload: Payload, sent_at: float, echo_of: Optional[float] = None) -> TimestampedMessage:
        with self._seq_lock:
            seq = self._seq
            self._seq += 1
        return TimestampedMessage(seq, sent_at, payload, echo_of)

    def topic(self, name: str) -> queue.Queue:
        if name not in self.topics:
            self.topics[name] = queue.Queue(self.maxsize)
        return self.topics[name]

    def put(self, topic: str, msg: TimestampedMessage) -> bool:
        try:
            self.topic(topic).put_nowait(msg)
            return True
        except queue.Full:
            self.dropped += 1
            logger.warning(f"{self.sender}: topic {topic} full, dropped seq={msg.seq}")
            return False

    def publish(self, payload: Payload, sent_at: float, echo_of: Optional[float] = None) -> TimestampedMessage:
        msg = self.stamp(payload, sent_at, echo_of)
        self.put(OUTBOUND, msg)
        return msg

    def deliver(self, msg: TimestampedMessage) -> bool:
        return self.put(INBOUND, msg)

    def next_message(self, topic: str, timeout: Optional[float] = None) -> Optional[TimestampedMessage]:
        try:
            if timeout is None or timeout <= 0:
                return self.topic(topic).get_nowait()
            return self.topic(topic).get(timeout=timeout)
        except queue.Empty:
            return None

    def drain(self, topic: str) -> List[TimestampedMessage]:
        out = []
        q = self.topic(topic)
        while True:
            try:
                out.append(q.get_nowait())
            except queue.Empty:
                return out

    def queue_length(self, topic: str) -> int:
        return self.topic(topic).qsize()
