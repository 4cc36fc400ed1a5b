"""Replication layer: a two-function async API over two backends.

Leaders call ``replicate_data`` and may proceed speculatively; the success
callback fires only once the layer guarantees followers eventually receive
the payload. The integrated backend collects follower acknowledgments
directly (majority of the rf+1 copies, counting the leader's own); the
middleware backend routes through an in-process broker with configurable
service latency. Followers call ``receive_data`` and get checksum-verified,
decompressed payloads in ascending batch order per priority.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

from . import wire
from .core import Priority
from .transport import BROKER_ROW, Message, MsgKind, NodeAddr

PayloadKey = tuple[int, Priority]
ReplicateCallback = Callable[[bool, "ReplicationMeta"], None]
ReceiveCallback = Callable[[bytes, "ReplicationMeta"], None]


@dataclass(frozen=True)
class ReplicationMeta:
    """Identity and framing facts for one replicated payload."""

    batch_id: int
    priority: Priority
    body_len: int = 0
    compressed: bool = False
    checksum: int = 0

    @property
    def key(self) -> PayloadKey:
        return (self.batch_id, self.priority)


def follower_acks_required(rf: int) -> int:
    """Follower acks forming a majority of the rf+1 copies (leader included)."""
    return (rf + 1) // 2


@dataclass
class QuorumState:
    """Ack accounting for one payload; the leader's own copy is the first ack."""

    required: int
    acks: int = 1
    acked_by: set[NodeAddr] = field(default_factory=set)
    confirmed: bool = False
    fired: bool = False

    def record_ack(self, sender: NodeAddr) -> bool:
        """Count one follower ack; True exactly when the quorum is reached."""
        if sender in self.acked_by:
            return False
        self.acked_by.add(sender)
        self.acks += 1
        if not self.confirmed and self.acks >= self.required:
            self.confirmed = True
            return True
        return False


class ReplicationSubmitter:
    """Leader-side half of the API, shared by both backends.

    ``targets`` are the endpoints that must hold the payload: the column's
    followers for the integrated backend, or the broker for the middleware
    backend. Payloads are retained for re-requests until pruned.
    """

    def __init__(
        self,
        addr: NodeAddr,
        targets: list[NodeAddr],
        required_acks: int,
        send: Callable[[Message], None],
        schedule: Callable[[float, Callable[[], None]], None],
        compression: bool = False,
        timeout_s: float = 10.0,
    ) -> None:
        self.addr = addr
        self.targets = list(targets)
        self.required_acks = required_acks
        self._send = send
        self._schedule = schedule
        self.compression = compression
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._states: dict[PayloadKey, tuple[QuorumState, ReplicateCallback]] = {}
        self._frames: dict[PayloadKey, bytes] = {}
        self.bytes_raw = 0
        self.bytes_sent = 0

    def replicate_data(
        self, batch_id: int, priority: Priority, data: bytes, callback: ReplicateCallback
    ) -> ReplicationMeta:
        """Submit one payload asynchronously; returns immediately."""
        body = wire.compress(data) if self.compression else data
        meta = ReplicationMeta(
            batch_id=batch_id,
            priority=priority,
            body_len=len(body),
            compressed=self.compression,
            checksum=wire.checksum(body),
        )
        self.bytes_raw += len(data)
        self.bytes_sent += len(body)
        frame = wire.encode_repl_frame(batch_id, priority, body, self.compression)
        state = QuorumState(required=self.required_acks + 1)
        with self._lock:
            self._frames[meta.key] = frame
            self._states[meta.key] = (state, callback)
        if self.required_acks == 0:
            self._fire(meta.key, True)
            return meta
        for target in self.targets:
            self._send(
                Message(MsgKind.REPL_DATA, self.addr, target, batch_id, frame)
            )
        self._schedule(self.timeout_s, lambda: self._on_timeout(meta.key))
        return meta

    def _fire(self, key: PayloadKey, ok: bool) -> None:
        with self._lock:
            entry = self._states.get(key)
            if entry is None:
                return
            state, callback = entry
            if state.fired:
                return
            state.fired = True
            meta = self._meta_for(key)
        callback(ok, meta)

    def _meta_for(self, key: PayloadKey) -> ReplicationMeta:
        frame = self._frames[key]
        batch_id, priority, compressed, check, body = wire.decode_repl_frame(frame)
        return ReplicationMeta(batch_id, priority, len(body), compressed, check)

    def on_ack(self, msg: Message) -> None:
        key: PayloadKey = msg.payload
        with self._lock:
            entry = self._states.get(key)
            if entry is None:
                return
            state, _ = entry
            reached = state.record_ack(msg.sender)
        if reached:
            self._fire(key, True)

    def _on_timeout(self, key: PayloadKey) -> None:
        with self._lock:
            entry = self._states.get(key)
            if entry is None or entry[0].confirmed:
                return
        self._fire(key, False)

    def on_fetch(self, msg: Message) -> None:
        """Re-serve a retained payload to a replica that is missing it."""
        key: PayloadKey = msg.payload
        with self._lock:
            frame = self._frames.get(key)
        if frame is not None:
            self._send(Message(MsgKind.REPL_DATA, self.addr, msg.sender, key[0], frame))

    def prune(self, batch_watermark: int) -> None:
        with self._lock:
            for key in [k for k in self._frames if k[0] <= batch_watermark]:
                self._frames.pop(key, None)
                self._states.pop(key, None)

    def held_frame(self, key: PayloadKey) -> bytes | None:
        with self._lock:
            return self._frames.get(key)


class ReplicationReceiver:
    """Replica-side half of the API.

    Buffers arriving frames, acknowledges them to their source (the ack is
    the durable-hold promise behind the delivery invariant), and fires each
    subscription exactly once with the verified, decompressed payload in
    ascending batch order per priority.
    """

    def __init__(
        self,
        addr: NodeAddr,
        fetch_addr: NodeAddr,
        send: Callable[[Message], None],
    ) -> None:
        self.addr = addr
        self.fetch_addr = fetch_addr
        self._send = send
        self._lock = threading.Lock()
        self._frames: dict[PayloadKey, bytes] = {}
        self._subs: dict[PayloadKey, ReceiveCallback] = {}
        self._delivered: set[PayloadKey] = set()
        self._next_bid: dict[Priority, int] = {}

    def on_data(self, msg: Message) -> None:
        frame: bytes = msg.payload
        try:
            batch_id, priority, compressed, check, body = wire.decode_repl_frame(frame)
        except wire.DecodeError:
            return
        key: PayloadKey = (batch_id, priority)
        if wire.checksum(body) != check:
            # Corrupted in transit: re-request instead of acking.
            self._send(Message(MsgKind.REPL_FETCH, self.addr, self.fetch_addr, batch_id, key))
            return
        with self._lock:
            if key not in self._frames:
                self._frames[key] = frame
        self._send(Message(MsgKind.REPL_ACK, self.addr, msg.sender, batch_id, key))
        self._pump(priority)

    def receive_data(
        self, batch_id: int, priority: Priority, callback: ReceiveCallback
    ) -> None:
        key: PayloadKey = (batch_id, priority)
        with self._lock:
            if key in self._delivered:
                return
            self._subs[key] = callback
        self._pump(priority)

    def request_fetch(self, batch_id: int, priority: Priority) -> None:
        self._send(
            Message(
                MsgKind.REPL_FETCH,
                self.addr,
                self.fetch_addr,
                batch_id,
                (batch_id, priority),
            )
        )

    def set_cursor(self, priority: Priority, next_batch_id: int) -> None:
        """Skip the delivery cursor forward (recovery rejoin path)."""
        with self._lock:
            self._next_bid[priority] = next_batch_id

    def held_frame(self, key: PayloadKey) -> bytes | None:
        with self._lock:
            return self._frames.get(key)

    def held_keys(self) -> list[PayloadKey]:
        with self._lock:
            return sorted(self._frames)

    def _pump(self, priority: Priority) -> None:
        """Deliver every in-order, subscribed payload for one priority."""
        while True:
            with self._lock:
                nxt = self._next_bid.get(priority, 0)
                key = (nxt, priority)
                frame = self._frames.get(key)
                callback = self._subs.get(key)
                if frame is None or callback is None or key in self._delivered:
                    return
                self._delivered.add(key)
                self._subs.pop(key, None)
                self._next_bid[priority] = nxt + 1
            batch_id, prio, compressed, check, body = wire.decode_repl_frame(frame)
            payload = wire.decompress(body) if compressed else body
            meta = ReplicationMeta(batch_id, prio, len(body), compressed, check)
            callback(payload, meta)


class Broker:
    """In-process replication middleware for one replication group.

    Accepts payloads from the column's leader, acknowledges after a
    configurable service latency, and pushes to the column's replicas. The
    ack implies the broker durably holds the payload, so re-requests are
    always servable.
    """

    def __init__(
        self,
        col: int,
        send: Callable[[Message], None],
        schedule: Callable[[float, Callable[[], None]], None],
        service_latency_s: float = 0.0,
    ) -> None:
        self.addr = NodeAddr(BROKER_ROW, col)
        self._send = send
        self._schedule = schedule
        self.service_latency_s = service_latency_s
        self.subscribers: list[NodeAddr] = []
        self._frames: dict[PayloadKey, bytes] = {}
        self._lock = threading.Lock()

    def on_message(self, msg: Message) -> None:
        if msg.kind is MsgKind.REPL_DATA:
            self._on_publish(msg)
        elif msg.kind is MsgKind.REPL_FETCH:
            self._on_fetch(msg)

    def _on_publish(self, msg: Message) -> None:
        frame: bytes = msg.payload
        batch_id, priority, _, _, _ = wire.decode_repl_frame(frame)
        key: PayloadKey = (batch_id, priority)
        with self._lock:
            self._frames[key] = frame

        def finish() -> None:
            self._send(Message(MsgKind.REPL_ACK, self.addr, msg.sender, batch_id, key))
            for sub in self.subscribers:
                self._send(Message(MsgKind.REPL_DATA, self.addr, sub, batch_id, frame))

        if self.service_latency_s > 0:
            self._schedule(self.service_latency_s, finish)
        else:
            finish()

    def _on_fetch(self, msg: Message) -> None:
        key: PayloadKey = msg.payload
        with self._lock:
            frame = self._frames.get(key)
        if frame is not None:
            self._send(Message(MsgKind.REPL_DATA, self.addr, msg.sender, key[0], frame))
