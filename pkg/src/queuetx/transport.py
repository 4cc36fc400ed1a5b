"""Message transport between cluster nodes.

LOOPBACK is the default: in-process queues with per-link injectable latency
and crash-based drops, giving reproducible desk-scale runs. TCP carries the
same messages over localhost sockets with a 4-byte length-prefixed framing;
it exists for multi-process style runs and shares all routing rules.

Delivery is FIFO per (sender, destination) link: a destination queue is
totally ordered, and injected latency is constant per link so scheduled
deliveries cannot reorder.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import pickle
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

BROKER_ROW = -1
CLIENT_ROW = -2


class NodeAddr(NamedTuple):
    row: int  # cluster instance (0 = leader instance)
    col: int  # replication group / partition column

    @property
    def is_leader(self) -> bool:
        return self.row == 0


class MsgKind(enum.Enum):
    CLIENT_TXN = "CLIENT_TXN"
    CLIENT_RESP = "CLIENT_RESP"
    REMOTE_EQ = "REMOTE_EQ"
    EQ_ACK = "EQ_ACK"
    DEP_VALUE = "DEP_VALUE"
    REPL_DATA = "REPL_DATA"
    REPL_ACK = "REPL_ACK"
    REPL_FETCH = "REPL_FETCH"
    EXEC_SUMMARY = "EXEC_SUMMARY"
    TERMINAL = "TERMINAL"
    BARRIER = "BARRIER"
    HEARTBEAT = "HEARTBEAT"
    ELECT_REQ = "ELECT_REQ"
    ELECT_RESP = "ELECT_RESP"
    RECOV_FETCH = "RECOV_FETCH"
    RECOV_DATA = "RECOV_DATA"


# Replication-group traffic stays inside a column; everything else stays
# inside a cluster instance row. Client messages are exempt (pseudo-row).
COLUMN_KINDS = frozenset(
    {
        MsgKind.REPL_DATA,
        MsgKind.REPL_ACK,
        MsgKind.REPL_FETCH,
        MsgKind.HEARTBEAT,
        MsgKind.ELECT_REQ,
        MsgKind.ELECT_RESP,
        MsgKind.RECOV_FETCH,
        MsgKind.RECOV_DATA,
    }
)


@dataclass
class Message:
    kind: MsgKind
    sender: NodeAddr
    dest: NodeAddr
    batch_id: int = 0
    payload: object = None


def routes_legally(msg: Message) -> bool:
    if CLIENT_ROW in (msg.sender.row, msg.dest.row):
        return True
    if msg.kind in COLUMN_KINDS:
        return msg.sender.col == msg.dest.col
    return msg.sender.row == msg.dest.row


class MessageCapture:
    """Optional recorder of (kind, sender, dest, batch) for routing checks."""

    def __init__(self) -> None:
        self.records: list[tuple[MsgKind, NodeAddr, NodeAddr, int]] = []
        self._lock = threading.Lock()

    def record(self, msg: Message) -> None:
        with self._lock:
            self.records.append((msg.kind, msg.sender, msg.dest, msg.batch_id))

    def counts_by_kind(self) -> dict[MsgKind, int]:
        out: dict[MsgKind, int] = {}
        with self._lock:
            for kind, _, _, _ in self.records:
                out[kind] = out.get(kind, 0) + 1
        return out


def routing_check(records: list[tuple[MsgKind, NodeAddr, NodeAddr, int]]) -> bool:
    """True iff every captured message respected column/row confinement."""
    return all(
        routes_legally(Message(kind, sender, dest, batch))
        for kind, sender, dest, batch in records
    )


class Scheduler:
    """Single-thread timer wheel for delayed deliveries and timeouts."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._cv = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name="scheduler", daemon=True)
        self._thread.start()

    def after(self, delay_s: float, fn: Callable[[], None]) -> None:
        with self._cv:
            if self._stopped:
                return
            heapq.heappush(self._heap, (time.monotonic() + delay_s, next(self._seq), fn))
            self._cv.notify()

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._stopped and (
                    not self._heap or self._heap[0][0] > time.monotonic()
                ):
                    timeout = None
                    if self._heap:
                        timeout = max(0.0, self._heap[0][0] - time.monotonic())
                    self._cv.wait(timeout)
                if self._stopped:
                    return
                _, _, fn = heapq.heappop(self._heap)
            try:
                fn()
            except Exception:  # noqa: BLE001 - a timer must not kill the wheel
                pass

    def stop(self) -> None:
        with self._cv:
            self._stopped = True
            self._cv.notify()
        self._thread.join(timeout=2.0)


class TransportError(RuntimeError):
    pass


class LoopbackTransport:
    """In-process transport with injectable per-link latency and crash drops."""

    def __init__(self, scheduler: Scheduler | None = None) -> None:
        self.scheduler = scheduler or Scheduler()
        self._owns_scheduler = scheduler is None
        self._handlers: dict[NodeAddr, Callable[[Message], None]] = {}
        self._latency: dict[tuple[NodeAddr, NodeAddr], float] = {}
        self._kind_latency: dict[MsgKind, float] = {}
        self._crashed: set[NodeAddr] = set()
        self.capture: MessageCapture | None = None
        self.drop_filter: Callable[[Message], bool] | None = None  # fault injection
        self._lock = threading.Lock()

    def register(self, addr: NodeAddr, handler: Callable[[Message], None]) -> None:
        with self._lock:
            self._handlers[addr] = handler

    def set_link_latency(self, sender: NodeAddr, dest: NodeAddr, latency_s: float) -> None:
        self._latency[(sender, dest)] = latency_s

    def set_kind_latency(self, kind: MsgKind, latency_s: float) -> None:
        """Constant latency for every link carrying this message kind."""
        self._kind_latency[kind] = latency_s

    def crash(self, addr: NodeAddr) -> None:
        with self._lock:
            self._crashed.add(addr)

    def recover(self, addr: NodeAddr) -> None:
        with self._lock:
            self._crashed.discard(addr)

    def is_crashed(self, addr: NodeAddr) -> bool:
        return addr in self._crashed

    def send(self, msg: Message) -> None:
        if self.capture is not None:
            self.capture.record(msg)
        if self.drop_filter is not None and self.drop_filter(msg):
            return
        with self._lock:
            if msg.sender in self._crashed or msg.dest in self._crashed:
                return
            handler = self._handlers.get(msg.dest)
        if handler is None:
            raise TransportError(f"no handler registered for {msg.dest}")
        delay = self._latency.get((msg.sender, msg.dest), 0.0) + self._kind_latency.get(
            msg.kind, 0.0
        )
        if delay <= 0.0:
            handler(msg)
        else:
            self.scheduler.after(delay, lambda: self._deliver(msg, handler))

    def _deliver(self, msg: Message, handler: Callable[[Message], None]) -> None:
        with self._lock:
            if msg.dest in self._crashed or msg.sender in self._crashed:
                return
        handler(msg)

    def stop(self) -> None:
        if self._owns_scheduler:
            self.scheduler.stop()


_FRAME = struct.Struct("<I")
_TCP_HEADER = struct.Struct("<B ii ii Q")


def encode_message(msg: Message) -> bytes:
    """TCP wire form: fixed header then a pickled payload body.

    REPL_DATA payloads are already canonical bytes (the replication frame);
    other payloads are control-plane structures between trusted peers.
    """
    kinds = list(MsgKind)
    body = msg.payload if isinstance(msg.payload, bytes) else pickle.dumps(msg.payload)
    is_raw = 1 if isinstance(msg.payload, bytes) else 0
    header = _TCP_HEADER.pack(
        kinds.index(msg.kind) | (is_raw << 7),
        msg.sender.row,
        msg.sender.col,
        msg.dest.row,
        msg.dest.col,
        msg.batch_id,
    )
    return _FRAME.pack(len(header) + len(body)) + header + body


def decode_message(frame: bytes) -> Message:
    kinds = list(MsgKind)
    raw_kind, s_row, s_col, d_row, d_col, batch = _TCP_HEADER.unpack(
        frame[: _TCP_HEADER.size]
    )
    body = frame[_TCP_HEADER.size :]
    payload: object = body if raw_kind & 0x80 else pickle.loads(body)
    return Message(
        kind=kinds[raw_kind & 0x7F],
        sender=NodeAddr(s_row, s_col),
        dest=NodeAddr(d_row, d_col),
        batch_id=batch,
        payload=payload,
    )


@dataclass
class _TcpPeer:
    addr: NodeAddr
    host: str
    port: int
    sock: socket.socket | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class TcpTransport:
    """Same message contract over localhost sockets, one listener per node."""

    def __init__(self) -> None:
        self._handlers: dict[NodeAddr, Callable[[Message], None]] = {}
        self._peers: dict[NodeAddr, _TcpPeer] = {}
        self._listeners: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._stopped = threading.Event()
        self.capture: MessageCapture | None = None
        self._lock = threading.Lock()

    def register(self, addr: NodeAddr, handler: Callable[[Message], None]) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(("127.0.0.1", 0))
        listener.listen(16)
        host, port = listener.getsockname()
        with self._lock:
            self._handlers[addr] = handler
            self._peers[addr] = _TcpPeer(addr, host, port)
            self._listeners.append(listener)
        thread = threading.Thread(
            target=self._accept_loop, args=(listener, addr), daemon=True
        )
        thread.start()
        self._threads.append(thread)

    def _accept_loop(self, listener: socket.socket, addr: NodeAddr) -> None:
        listener.settimeout(0.2)
        while not self._stopped.is_set():
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            thread = threading.Thread(
                target=self._recv_loop, args=(conn, addr), daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def _recv_loop(self, conn: socket.socket, addr: NodeAddr) -> None:
        buf = b""
        conn.settimeout(0.2)
        while not self._stopped.is_set():
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            if not chunk:
                return
            buf += chunk
            while len(buf) >= _FRAME.size:
                (length,) = _FRAME.unpack(buf[: _FRAME.size])
                if len(buf) < _FRAME.size + length:
                    break
                frame = buf[_FRAME.size : _FRAME.size + length]
                buf = buf[_FRAME.size + length :]
                handler = self._handlers.get(addr)
                if handler is not None:
                    handler(decode_message(frame))

    def send(self, msg: Message) -> None:
        if self.capture is not None:
            self.capture.record(msg)
        peer = self._peers.get(msg.dest)
        if peer is None:
            raise TransportError(f"no TCP peer registered for {msg.dest}")
        data = encode_message(msg)
        with peer.lock:
            if peer.sock is None:
                peer.sock = socket.create_connection((peer.host, peer.port), timeout=2.0)
            try:
                peer.sock.sendall(data)
            except OSError as exc:
                peer.sock = None
                raise TransportError(f"send to {msg.dest} failed: {exc}") from exc

    def crash(self, addr: NodeAddr) -> None:
        raise TransportError("fault injection is only supported on LOOPBACK")

    def recover(self, addr: NodeAddr) -> None:
        raise TransportError("fault injection is only supported on LOOPBACK")

    def is_crashed(self, addr: NodeAddr) -> bool:
        return False

    def set_kind_latency(self, kind: MsgKind, latency_s: float) -> None:
        raise TransportError("latency injection is only supported on LOOPBACK")

    def stop(self) -> None:
        self._stopped.set()
        with self._lock:
            for listener in self._listeners:
                try:
                    listener.close()
                except OSError:
                    pass
            for peer in self._peers.values():
                if peer.sock is not None:
                    try:
                        peer.sock.close()
                    except OSError:
                        pass
