"""Cluster topology, batch lifecycle orchestration, and the desk-scale harness.

Nodes form a grid: rows are cluster instances (row 0 is the leader instance,
each row holds every partition once) and columns are replication groups (all
copies of one partition). Replication traffic stays inside a column; all
other processing traffic stays inside a row.

Per batch, each leader node's planner threads plan client transactions into
priority-tagged queues, publish local slots, send remote queues to row peers,
and submit the plan to the replication layer. Execution starts immediately in
SPECULATIVE mode (only commitment gates on the replication acknowledgment);
in SYNCHRONOUS mode nothing is delivered or executed until the ack arrives.
Once a node has executed all its slots it broadcasts an execution summary;
when it holds every row peer's summary it seals the batch: computes the
deterministic abort closure, rolls back aborted writes, builds the write-only
queues, and appends them to its durability log. Sealing releases the next
batch for execution and the commitment passes.

Synchronization granularity: with THREAD sync a planner proceeds to the next
batch as soon as its own batch is committed (its remote-queue acks are implied
by that); with NODE sync every node finishes the whole batch before any
planner starts the next. Commitment passes are barriered across batches in
both modes so conflicting transactions in consecutive batches commit in epoch
order.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from queue import Empty, SimpleQueue
from typing import Callable

from .committer import BatchCommitter, cascade_closure, resolve_rollbacks
from .core import (
    BatchMetadata,
    ExecutionQueue,
    PartitionStore,
    Priority,
    SlotKey,
    TxnId,
    TxnStatus,
    ValidationError,
)
from .durability import (
    Checkpoint,
    DurabilityLog,
    build_batch_write_set,
    elect_leader,
    recover_node,
    take_checkpoint,
)
from .executor import BatchRuntime, ExecHooks, ExecutionEngine, TraceEntry
from .planner import ClientTransactionQueue, PlanBatch, batch_ready, plan_client_txn
from .replication import (
    Broker,
    ReplicationReceiver,
    ReplicationSubmitter,
    follower_acks_required,
)
from .transport import (
    CLIENT_ROW,
    LoopbackTransport,
    Message,
    MessageCapture,
    MsgKind,
    NodeAddr,
    Scheduler,
    TcpTransport,
    routing_check,
)
from .wire import deserialize_plan, serialize_plan
from .workload import ClientTxn, TxnGenerator, WorkloadConfig, initial_value


def now_ns() -> int:
    return time.monotonic_ns()


class SyncGranularity(enum.Enum):
    NODE = "NODE"
    THREAD = "THREAD"


class ReplMode(enum.Enum):
    SPECULATIVE = "SPECULATIVE"
    SYNCHRONOUS = "SYNCHRONOUS"


class ReplBackend(enum.Enum):
    QUORUM = "QUORUM"
    BROKER = "BROKER"


class TransportKind(enum.Enum):
    LOOPBACK = "LOOPBACK"
    TCP = "TCP"


class FatalClusterError(RuntimeError):
    """A pipeline wait stalled past the watchdog or replication failed."""


class ClusterStopped(Exception):
    """Internal signal: the harness is shutting down."""


class BatchAbandoned(Exception):
    """Internal signal: recovery or promotion reset this node mid-batch."""


@dataclass
class ClusterConfig:
    partitions: int = 4
    rf: int = 0
    planners: int = 1
    executors: int = 2
    follower_executors: int | None = None  # replicas may run leaner (heterogeneous)
    batch_size: int = 20_000
    subranges: int | None = None  # defaults to the leader executor count
    sync_granularity: SyncGranularity = SyncGranularity.THREAD
    repl_mode: ReplMode = ReplMode.SPECULATIVE
    repl_backend: ReplBackend = ReplBackend.QUORUM
    compression: bool = False
    transport: TransportKind = TransportKind.LOOPBACK
    plan_timeout_s: float = 0.05
    watchdog_s: float = 10.0
    repl_timeout_s: float = 10.0
    delivery_latency_s: float = 0.0  # intra-instance links
    repl_latency_s: float = 0.0  # replication-group links / broker service
    capture_traces: bool = False
    capture_messages: bool = False
    retain_batches: bool = True
    # Overhead measurement aid: followers acknowledge and buffer replicated
    # plans during the run but defer applying them until released, so the
    # measured leader throughput reflects replication protocol cost rather
    # than the simulation artifact of co-hosting replicas on the leader CPU.
    defer_follower_apply: bool = False
    records_per_partition: int = 10_000
    record_size: int = 100
    heartbeats: bool = False
    heartbeat_interval_s: float = 0.1
    heartbeat_misses: int = 5
    checkpoint_every: int | None = None

    def validate(self) -> None:
        if self.partitions < 1:
            raise ValidationError("partitions must be >= 1")
        if self.rf < 0:
            raise ValidationError("rf must be >= 0")
        if self.planners < 1 or self.executors < 1:
            raise ValidationError("planners and executors must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    @property
    def subranges_effective(self) -> int:
        return self.subranges if self.subranges is not None else self.executors

    def all_priorities(self) -> list[Priority]:
        return [
            Priority(col, thread)
            for col in range(self.partitions)
            for thread in range(self.planners)
        ]


@dataclass
class BatchTimings:
    """Wall-clock ticks (ns) of one batch's lifecycle on one node."""

    batch_id: int
    node: NodeAddr
    plan_start: int = 0
    plan_end: int = 0
    deliver_start: int = 0
    repl_submit: int = 0
    contrib_done: int = 0
    exec_done: int = 0
    repl_ack: int = 0
    seal: int = 0
    commit_done: int = 0

    @staticmethod
    def _d(a: int, b: int) -> float:
        if a == 0 or b == 0:
            return 0.0
        return max(0.0, (b - a) / 1e9)

    @property
    def t_pl(self) -> float:
        return self._d(self.plan_start, self.plan_end)

    @property
    def t_deliv(self) -> float:
        return self._d(self.deliver_start, self.contrib_done)

    @property
    def t_ex(self) -> float:
        return self._d(max(self.contrib_done, self.deliver_start), self.exec_done)

    @property
    def t_repl(self) -> float:
        return self._d(self.repl_submit, self.repl_ack)

    @property
    def t_c(self) -> float:
        return self._d(max(self.seal, self.repl_ack), self.commit_done)

    @property
    def total(self) -> float:
        return self._d(self.plan_start, self.commit_done)


def predict_batch_latency(
    t_pl: float, t_deliv: float, t_ex: float, t_repl: float, t_c: float
) -> float:
    """Batch latency model: planning, then the slower of processing (delivery
    plus execution) and replication confirmation, then commitment."""
    return t_pl + max(t_deliv + t_ex, t_repl) + t_c


@dataclass
class LatencyReport:
    batch_id: int
    node: NodeAddr
    predicted_s: float
    measured_s: float

    @property
    def ratio(self) -> float:
        if self.predicted_s == 0:
            return 1.0 if self.measured_s == 0 else float("inf")
        return self.measured_s / self.predicted_s


def latency_decompose(timings: BatchTimings) -> LatencyReport:
    predicted = predict_batch_latency(
        timings.t_pl, timings.t_deliv, timings.t_ex, timings.t_repl, timings.t_c
    )
    return LatencyReport(timings.batch_id, timings.node, predicted, timings.total)


@dataclass
class PlannerBatchState:
    delivered: bool = False
    repl_ok: bool | None = None
    repl_ack_tick: int = 0
    plan_start: int = 0
    plan_end: int = 0
    deliver_start: int = 0
    repl_submit: int = 0


@dataclass
class NodeBatch:
    """All per-batch state a node tracks beyond the execution runtime."""

    bid: int
    runtime: BatchRuntime
    planner_state: dict[Priority, PlannerBatchState] = field(default_factory=dict)
    summaries: dict[int, dict] = field(default_factory=dict)  # keyed by column
    exec_fired: bool = False
    sealed: bool = False
    abort_set: set[TxnId] = field(default_factory=set)
    merged_preds: dict[TxnId, set[TxnId]] = field(default_factory=dict)
    merged_read_from: dict[TxnId, set[TxnId]] = field(default_factory=dict)
    board: dict[TxnId, TxnStatus] = field(default_factory=dict)
    planners_committed: set[int] = field(default_factory=set)
    commit_done: bool = False
    arrivals: dict[TxnId, int] = field(default_factory=dict)
    installed_payloads: dict[Priority, bytes] = field(default_factory=dict)
    contrib_done_tick: int = 0
    exec_done_tick: int = 0
    seal_tick: int = 0
    commit_done_tick: int = 0
    write_only: list = field(default_factory=list)


@dataclass
class ClientResponse:
    txn_id: TxnId
    status: TxnStatus
    latency_ns: int
    tick: int


class Node(ExecHooks):
    """One server: planner threads, executor threads, one communication thread."""

    def __init__(self, harness: "ClusterHarness", addr: NodeAddr) -> None:
        self.harness = harness
        self.config = harness.config
        self.addr = addr
        self.lock = threading.RLock()
        self.cv = threading.Condition(self.lock)
        self.is_leader = addr.row == 0
        self.crashed = False
        self.apply_paused = addr.row > 0 and harness.config.defer_follower_apply
        self.resume_bid = 0
        self.resume_epoch = 0

        cfg = self.config
        self.store = PartitionStore(addr.col, cfg.record_size)
        self.store.populate(
            self._all_keys(), lambda k: initial_value(k, cfg.record_size)
        )

        self.batches: dict[int, NodeBatch] = {}
        self.seal_watermark = -1
        self.commit_watermark = -1
        self.commit_done_by_col: dict[int, int] = {c: -1 for c in range(cfg.partitions)}
        self.batch_done_by_col: dict[int, int] = {c: -1 for c in range(cfg.partitions)}
        self.log = DurabilityLog()
        self.last_checkpoint: Checkpoint | None = None

        self.engine = ExecutionEngine(self.cv, hooks=self)
        self.streams: dict[int, ClientTransactionQueue] = {}
        self.commit_log: list[tuple[TxnId, TxnStatus, int, int]] = []
        self.responses: list[ClientResponse] = []
        self.timings: list[BatchTimings] = []
        self.rejected = 0
        self._pending_terminal: list[tuple[TxnId, TxnStatus]] = []

        self.repl_submitter: ReplicationSubmitter | None = None
        self.repl_receiver: ReplicationReceiver | None = None
        self.recovery_source = NodeAddr(0, addr.col)  # current column leader

        self.inbox: SimpleQueue = SimpleQueue()
        self._threads: list[threading.Thread] = []
        self.last_heartbeat = now_ns()
        self._election_votes: dict[int, int] = {}
        self._electing = False

    def _all_keys(self) -> range:
        cfg = self.config
        return range(
            self.addr.col,
            cfg.partitions * cfg.records_per_partition,
            cfg.partitions,
        )

    # ------------------------------------------------------------------ infra

    def send(self, msg: Message) -> None:
        self.harness.transport.send(msg)

    def on_message(self, msg: Message) -> None:
        """Transport delivery callback; hands off to the communication thread.

        Never takes the node lock: the delivery scheduler thread serves every
        node, so blocking here would head-of-line block the whole cluster.
        """
        self.inbox.put(msg)

    def row_peers(self) -> list[NodeAddr]:
        return [
            NodeAddr(self.addr.row, c)
            for c in range(self.config.partitions)
            if c != self.addr.col
        ]

    def column_followers(self) -> list[NodeAddr]:
        return [NodeAddr(r, self.addr.col) for r in range(1, self.config.rf + 1)]

    def start(self) -> None:
        name = f"n{self.addr.row}.{self.addr.col}"
        self._threads.append(
            threading.Thread(target=self._comm_loop, name=f"{name}-comm", daemon=True)
        )
        executors = self.config.executors
        if self.addr.row > 0 and self.config.follower_executors is not None:
            executors = self.config.follower_executors
        for w in range(executors):
            self._threads.append(
                threading.Thread(
                    target=self._executor_loop, name=f"{name}-exec{w}", daemon=True
                )
            )
        for p in range(self.config.planners):
            self._threads.append(
                threading.Thread(
                    target=self._planner_loop, args=(p,), name=f"{name}-plan{p}", daemon=True
                )
            )
        if self.config.heartbeats:
            self._threads.append(
                threading.Thread(target=self._heartbeat_loop, name=f"{name}-hb", daemon=True)
            )
        for t in self._threads:
            t.start()

    def join_planners(self, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        for t in self._threads:
            if "-plan" in t.name:
                t.join(max(0.0, deadline - time.monotonic()))

    # ------------------------------------------------------------- batch state

    def get_or_create_batch(self, bid: int) -> NodeBatch:
        with self.cv:
            nb = self.batches.get(bid)
            if nb is None:
                bm = BatchMetadata(bid, self.config.all_priorities(), lock=self.lock)
                runtime = BatchRuntime(
                    bm=bm,
                    store=self.store,
                    partitions=self.config.partitions,
                    subranges=self.config.subranges_effective,
                    capture_trace=self.config.capture_traces,
                    track_preds=self.addr.row == 0,
                    record_images=self.addr.row == 0,
                )
                nb = NodeBatch(bid=bid, runtime=runtime)
                for p in range(self.config.planners):
                    nb.planner_state[Priority(self.addr.col, p)] = PlannerBatchState()
                self.batches[bid] = nb
            return nb

    # ------------------------------------------------------------ wait helpers

    def _wait(
        self,
        what: str,
        pred: Callable[[], bool],
        epoch: int | None = None,
        on_progress_reset: bool = False,
    ) -> None:
        """Block on the node condition until ``pred`` holds.

        Raises ClusterStopped on shutdown, BatchAbandoned when a recovery or
        promotion bumped the node's resume epoch, and FatalClusterError once
        the watchdog expires: a deterministic pipeline never legitimately
        stalls this long at desk scale, so a stall names a lost message or a
        dead peer. Caller holds the node condition.
        """
        deadline = time.monotonic() + self.config.watchdog_s
        while True:
            if self.harness.stopping:
                raise ClusterStopped()
            if epoch is not None and self.resume_epoch != epoch:
                raise BatchAbandoned()
            if not self.crashed and pred():
                return
            if self.crashed or self.apply_paused:
                deadline = time.monotonic() + self.config.watchdog_s
            if time.monotonic() > deadline:
                self.harness.fatal(f"watchdog: node {self.addr} stalled waiting for {what}")
                raise FatalClusterError(what)
            self.cv.wait(0.05)

    # ------------------------------------------------------------- comm thread

    def _comm_loop(self) -> None:
        while True:
            try:
                msg = self.inbox.get(timeout=0.1)
            except Empty:
                if self.harness.stopping:
                    return
                continue
            if self.crashed:
                continue
            try:
                self._dispatch(msg)
            except (ClusterStopped, BatchAbandoned):
                pass

    def _dispatch(self, msg: Message) -> None:
        kind = msg.kind
        if kind is MsgKind.REMOTE_EQ:
            self._on_remote_eq(msg)
        elif kind is MsgKind.EQ_ACK:
            self._on_eq_ack(msg)
        elif kind is MsgKind.DEP_VALUE:
            self._on_dep_value(msg)
        elif kind is MsgKind.EXEC_SUMMARY:
            self._on_exec_summary(msg)
        elif kind is MsgKind.TERMINAL:
            self._on_terminal_msg(msg)
        elif kind is MsgKind.BARRIER:
            self._on_barrier(msg)
        elif kind is MsgKind.REPL_DATA:
            if self.repl_receiver is not None:
                self.repl_receiver.on_data(msg)
        elif kind is MsgKind.REPL_ACK:
            if self.repl_submitter is not None:
                self.repl_submitter.on_ack(msg)
        elif kind is MsgKind.REPL_FETCH:
            if self.repl_submitter is not None:
                self.repl_submitter.on_fetch(msg)
        elif kind is MsgKind.HEARTBEAT:
            with self.cv:
                self.last_heartbeat = now_ns()
        elif kind is MsgKind.ELECT_REQ:
            self._on_elect_req(msg)
        elif kind is MsgKind.ELECT_RESP:
            self._on_elect_resp(msg)
        elif kind is MsgKind.RECOV_FETCH:
            self._on_recov_fetch(msg)
        elif kind is MsgKind.RECOV_DATA:
            self._on_recov_data(msg)

    def _on_remote_eq(self, msg: Message) -> None:
        priority_raw, eqs = msg.payload
        priority = Priority(*priority_raw)
        nb = self.get_or_create_batch(msg.batch_id)
        if nb.runtime.bm.install_contribution(priority, eqs):
            self._after_install(nb)

    def _after_install(self, nb: NodeBatch) -> None:
        with self.cv:
            bm = nb.runtime.bm
            if bm.all_contributed() and nb.contrib_done_tick == 0:
                nb.contrib_done_tick = now_ns()
            if bm.done_locked():
                self._on_exec_complete(nb)
            self.cv.notify_all()

    def _on_eq_ack(self, msg: Message) -> None:
        _, _, _, completed, aborted = msg.payload
        nb = self.get_or_create_batch(msg.batch_id)
        with self.cv:
            self._apply_completions(nb, completed, aborted)
            self.cv.notify_all()

    def _apply_completions(self, nb: NodeBatch, completed, aborted) -> None:
        for txn in completed:
            tc = nb.runtime.bm.tc_store.get(txn)
            if tc is not None:
                tc.add_completed()
                if txn in aborted:
                    tc.aborted = True

    def _on_dep_value(self, msg: Message) -> None:
        txn, op_index, value = msg.payload
        nb = self.get_or_create_batch(msg.batch_id)
        with self.cv:
            self.engine.deliver_dep_value(nb.runtime, txn, op_index, value)
            self.cv.notify_all()

    def _on_exec_summary(self, msg: Message) -> None:
        col, summary = msg.payload
        nb = self.get_or_create_batch(msg.batch_id)
        with self.cv:
            nb.summaries[col] = summary
            self._advance_seals()
            self.cv.notify_all()

    def _on_terminal_msg(self, msg: Message) -> None:
        nb = self.get_or_create_batch(msg.batch_id)
        with self.cv:
            for txn, status in msg.payload:
                nb.board[txn] = status
            self.cv.notify_all()

    def _on_barrier(self, msg: Message) -> None:
        col = msg.sender.col
        with self.cv:
            if msg.payload == "COMMIT":
                self.commit_done_by_col[col] = max(self.commit_done_by_col[col], msg.batch_id)
            else:
                self.batch_done_by_col[col] = max(self.batch_done_by_col[col], msg.batch_id)
            self.cv.notify_all()

    # ---------------------------------------------------------- executor hooks

    def send_dep(self, runtime: BatchRuntime, dep, txn: TxnId, value: bytes) -> None:
        if dep.target_partition == self.addr.col:
            with self.cv:
                self.engine.deliver_dep_value(runtime, txn, dep.op_index, value)
                self.cv.notify_all()
        else:
            self.send(
                Message(
                    MsgKind.DEP_VALUE,
                    self.addr,
                    NodeAddr(self.addr.row, dep.target_partition),
                    runtime.bm.batch_id,
                    (txn, dep.op_index, value),
                )
            )

    def eq_finished(self, runtime, eq: ExecutionQueue, completed, aborted) -> None:
        planner_col = eq.priority.node_rank
        if planner_col == self.addr.col:
            nb = self.batches.get(eq.batch_id)
            if nb is None:
                return
            with self.cv:
                self._apply_completions(nb, completed, set(aborted))
                self.cv.notify_all()
        else:
            self.send(
                Message(
                    MsgKind.EQ_ACK,
                    self.addr,
                    NodeAddr(self.addr.row, planner_col),
                    eq.batch_id,
                    (tuple(eq.priority), eq.partition, eq.subrange, completed, set(aborted)),
                )
            )

    def batch_executed(self, runtime: BatchRuntime) -> None:
        nb = self.batches.get(runtime.bm.batch_id)
        if nb is None:
            return
        with self.cv:
            self._on_exec_complete(nb)

    def _on_exec_complete(self, nb: NodeBatch) -> None:
        """All local slots executed: broadcast the summary. Holds the cv."""
        if nb.exec_fired:
            return
        nb.exec_fired = True
        nb.exec_done_tick = now_ns()
        summary = nb.runtime.local_summary()
        nb.summaries[self.addr.col] = summary
        for peer in self.row_peers():
            self.send(
                Message(MsgKind.EXEC_SUMMARY, self.addr, peer, nb.bid, (self.addr.col, summary))
            )
        self._advance_seals()
        self.cv.notify_all()

    # ----------------------------------------------------------------- sealing

    def _advance_seals(self) -> None:
        while self._try_seal(self.batches.get(self.seal_watermark + 1)):
            pass

    def _try_seal(self, nb: NodeBatch | None) -> bool:
        """Seal one batch: abort closure, rollback, write-only log. Holds the cv.

        Sealing finalizes the partition state for the batch, so the next
        batch's execution (gated on the seal watermark) reads committed data
        only; cascading aborts can never cross batch boundaries.
        """
        if (
            nb is None
            or nb.sealed
            or not nb.exec_fired
            or len(nb.summaries) < self.config.partitions
        ):
            return False
        aborts: set[TxnId] = set()
        read_from: dict[TxnId, set[TxnId]] = {}
        preds: dict[TxnId, set[TxnId]] = {}
        for summary in nb.summaries.values():
            aborts |= summary["aborts"]
            for txn, deps in summary["read_from"].items():
                read_from.setdefault(txn, set()).update(deps)
            for txn, deps in summary["preds"].items():
                preds.setdefault(txn, set()).update(deps)
        nb.merged_read_from = read_from
        nb.merged_preds = preds
        nb.abort_set = cascade_closure(aborts, read_from)
        runtime = nb.runtime
        for key, value in resolve_rollbacks(runtime.write_log, nb.abort_set).items():
            self.store.put(key, value)
        nb.write_only = build_batch_write_set(
            runtime.write_log,
            nb.abort_set,
            self.store,
            nb.bid,
            self.addr.col,
            self.config.partitions,
            self.config.subranges_effective,
        )
        self.log.append_batch(nb.bid, nb.write_only)
        nb.sealed = True
        nb.seal_tick = now_ns()
        self.seal_watermark = nb.bid
        self.cv.notify_all()
        return True

    # ----------------------------------------------------------- executor loop

    def _executor_loop(self) -> None:
        while True:
            runtime = None
            claim: SlotKey | None = None
            with self.cv:
                while claim is None:
                    if self.harness.stopping:
                        return
                    if not self.crashed and not self.apply_paused:
                        nb = self.batches.get(self.seal_watermark + 1)
                        if nb is not None:
                            runtime = nb.runtime
                            claim = self.engine.find_work(runtime)
                    if claim is None:
                        self.cv.wait(0.05)
            self.engine.run_claim(runtime, claim)

    # ------------------------------------------------------------ planner loop

    def _planner_loop(self, thread_rank: int) -> None:
        bid = 0
        while True:
            with self.cv:
                epoch = self.resume_epoch
                if bid < self.resume_bid:
                    bid = self.resume_bid
            stop_bid = self.harness.stop_bid
            if stop_bid is not None and bid > stop_bid:
                return
            try:
                if self.is_leader:
                    self._leader_batch(thread_rank, bid, epoch)
                else:
                    self._follower_batch(thread_rank, bid, epoch)
                bid += 1
            except BatchAbandoned:
                continue
            except (ClusterStopped, FatalClusterError):
                return

    def _plan_barrier(self, bid: int, epoch: int) -> None:
        if self.config.sync_granularity is SyncGranularity.NODE and bid > 0:
            with self.cv:
                self._wait(
                    f"node barrier for batch {bid - 1}",
                    lambda: all(v >= bid - 1 for v in self.batch_done_by_col.values()),
                    epoch=epoch,
                )

    def _leader_batch(self, thread_rank: int, bid: int, epoch: int) -> None:
        cfg = self.config
        priority = Priority(self.addr.col, thread_rank)
        self._plan_barrier(bid, epoch)
        nb = self.get_or_create_batch(bid)
        pstate = nb.planner_state[priority]
        stream = self.streams.get(thread_rank)

        pstate.plan_start = now_ns()
        plan = PlanBatch(bid, priority)
        started = time.monotonic()
        while not batch_ready(
            plan.planned, cfg.batch_size, time.monotonic() - started, cfg.plan_timeout_s
        ):
            client_txn = stream.pop() if stream is not None else None
            if client_txn is None:
                break  # stream exhausted: deliver what we have (epoch marker if empty)
            client_txn.arrival_tick = now_ns()
            try:
                txn = plan_client_txn(plan, client_txn, cfg.partitions, cfg.subranges_effective)
            except ValidationError:
                self.rejected += 1
                continue
            nb.arrivals[txn.txn_id] = client_txn.arrival_tick
        pstate.plan_end = now_ns()

        body = serialize_plan(plan.all_eqs(), plan.tc_shard) if cfg.rf > 0 else b""
        if cfg.repl_mode is ReplMode.SYNCHRONOUS and cfg.rf > 0:
            # Conservative baseline: nothing is delivered, executed, or sent
            # until the replication layer confirms the batch.
            self._submit_replication(nb, priority, body)
            with self.cv:
                self._wait(
                    f"synchronous replication ack for batch {bid}",
                    lambda: pstate.repl_ok is not None,
                    epoch=epoch,
                )
            self._deliver(nb, plan, priority)
        else:
            self._deliver(nb, plan, priority)
            if cfg.rf > 0:
                self._submit_replication(nb, priority, body)
            else:
                with self.cv:
                    pstate.repl_ok = True
                    pstate.repl_submit = pstate.repl_ack_tick = now_ns()
        self._finish_batch(nb, priority, thread_rank, epoch)

    def _deliver(self, nb: NodeBatch, plan: PlanBatch, priority: Priority) -> None:
        pstate = nb.planner_state[priority]
        pstate.deliver_start = now_ns()
        fresh = nb.runtime.bm.install_contribution(
            priority, plan.eqs_for_partition(self.addr.col)
        )
        with self.cv:
            nb.runtime.bm.tc_store.update(plan.tc_shard)
            pstate.delivered = True
        if fresh:
            self._after_install(nb)
        for peer in self.row_peers():
            self.send(
                Message(
                    MsgKind.REMOTE_EQ,
                    self.addr,
                    peer,
                    nb.bid,
                    (tuple(priority), plan.eqs_for_partition(peer.col)),
                )
            )

    def _submit_replication(self, nb: NodeBatch, priority: Priority, body: bytes) -> None:
        pstate = nb.planner_state[priority]
        pstate.repl_submit = now_ns()

        def on_done(ok: bool, meta) -> None:
            with self.cv:
                pstate.repl_ok = ok
                pstate.repl_ack_tick = now_ns()
                self.cv.notify_all()

        self.repl_submitter.replicate_data(nb.bid, priority, body, on_done)

    def _follower_batch(self, thread_rank: int, bid: int, epoch: int) -> None:
        priority = Priority(self.addr.col, thread_rank)
        if self.apply_paused:
            with self.cv:
                self._wait("apply release", lambda: not self.apply_paused, epoch=epoch)
        self._plan_barrier(bid, epoch)
        nb = self.get_or_create_batch(bid)
        pstate = nb.planner_state[priority]
        pstate.plan_start = pstate.plan_end = now_ns()

        # The receive callback only stashes the verified payload: installing
        # (deserialize + publish) runs on this planner thread, so the comm
        # thread stays free to acknowledge later replication frames promptly.
        pending: list[bytes] = []

        def stash(body: bytes, meta) -> None:
            with self.cv:
                pending.append(body)
                self.cv.notify_all()

        self.repl_receiver.receive_data(bid, priority, stash)
        refetch_at = time.monotonic() + 1.0
        body: bytes | None = None
        with self.cv:
            while not pending:
                if self.harness.stopping:
                    raise ClusterStopped()
                if epoch != self.resume_epoch:
                    raise BatchAbandoned()
                # A frame sent while this node was crashed (or addressed to a
                # dead leader) never arrives on its own: re-request it. The
                # same applies to write-only queues still missing from a
                # recovery catch-up window.
                if not self.crashed and time.monotonic() > refetch_at:
                    self.repl_receiver.request_fetch(bid, priority)
                    if self.seal_watermark < bid - 1:
                        self.send(
                            Message(
                                MsgKind.RECOV_FETCH,
                                self.addr,
                                self.recovery_source,
                                bid - 1,
                                (self.log.watermark + 1, bid - 1),
                            )
                        )
                    refetch_at = time.monotonic() + 1.0
                self.cv.wait(0.05)
            body = pending[0]
        self._install_replicated(bid, priority, body)
        self._finish_batch(nb, priority, thread_rank, epoch)

    def _install_replicated(self, bid: int, priority: Priority, body: bytes) -> None:
        """Follower install path; runs on the replication delivery thread."""
        eqs, tcs = deserialize_plan(body)
        nb = self.get_or_create_batch(bid)
        fresh = nb.runtime.bm.install_contribution(
            priority, [eq for eq in eqs if eq.partition == self.addr.col]
        )
        with self.cv:
            nb.runtime.bm.tc_store.update(tcs)
            pstate = nb.planner_state[priority]
            pstate.delivered = True
            pstate.deliver_start = now_ns()
            if self.config.retain_batches:
                nb.installed_payloads[priority] = body
            self.cv.notify_all()
        if fresh:
            self._after_install(nb)
            by_col: dict[int, list[ExecutionQueue]] = {}
            for eq in eqs:
                by_col.setdefault(eq.partition, []).append(eq)
            for peer in self.row_peers():
                self.send(
                    Message(
                        MsgKind.REMOTE_EQ,
                        self.addr,
                        peer,
                        bid,
                        (tuple(priority), by_col.get(peer.col, [])),
                    )
                )

    # ------------------------------------------------------------- commitment

    def _finish_batch(self, nb: NodeBatch, priority: Priority, thread_rank: int, epoch: int) -> None:
        pstate = nb.planner_state[priority]
        with self.cv:
            self._wait(f"seal of batch {nb.bid}", lambda: nb.sealed, epoch=epoch)
            if self.is_leader and self.config.rf > 0:
                self._wait(
                    f"replication ack for batch {nb.bid}",
                    lambda: pstate.repl_ok is not None,
                    epoch=epoch,
                )
                if pstate.repl_ok is False:
                    self.harness.fatal(
                        f"replication failed for batch {nb.bid} planner {priority}: "
                        "quorum unreachable; the batch must not commit"
                    )
                    raise FatalClusterError("replication failure")
            self._wait(
                f"cluster commit of batch {nb.bid - 1}",
                lambda: all(v >= nb.bid - 1 for v in self.commit_done_by_col.values()),
                epoch=epoch,
            )
            self._run_commit(nb, priority, epoch)
            nb.planners_committed.add(thread_rank)
            if len(nb.planners_committed) == self.config.planners and not nb.commit_done:
                self._node_commit_done(nb)

    def _run_commit(self, nb: NodeBatch, priority: Priority, epoch: int) -> None:
        """Commitment pass for this planner's shard. Holds the cv."""
        deadline = [time.monotonic() + self.config.watchdog_s]

        def wait_progress() -> None:
            if self.harness.stopping:
                raise ClusterStopped()
            if self.resume_epoch != epoch:
                raise BatchAbandoned()
            if time.monotonic() > deadline[0]:
                self.harness.fatal(
                    f"watchdog: node {self.addr} stalled committing batch {nb.bid}"
                )
                raise FatalClusterError("commit stall")
            self.cv.wait(0.05)

        def on_terminal(tc, status: TxnStatus, tick: int) -> None:
            deadline[0] = time.monotonic() + self.config.watchdog_s
            self._on_local_terminal(nb, tc, status, tick)

        committer = BatchCommitter(
            txns_in_order=sorted(
                t for t in nb.runtime.bm.tc_store if t.priority == priority
            ),
            tcs=nb.runtime.bm.tc_store,
            abort_set=nb.abort_set,
            preds=nb.merged_preds,
            board=nb.board,
            on_terminal=on_terminal,
            wait_progress=wait_progress,
            flush=lambda: self._flush_terminal(nb),
        )
        committer.run()

    def _on_local_terminal(self, nb: NodeBatch, tc, status: TxnStatus, tick: int) -> None:
        self.commit_log.append((tc.txn_id, status, tick, nb.bid))
        self._pending_terminal.append((tc.txn_id, status))
        if self.is_leader:
            arrival = nb.arrivals.get(tc.txn_id, tick)
            latency = tick - arrival
            self.responses.append(ClientResponse(tc.txn_id, status, latency, tick))
            self.send(
                Message(
                    MsgKind.CLIENT_RESP,
                    self.addr,
                    NodeAddr(CLIENT_ROW, self.addr.col),
                    nb.bid,
                    (tc.txn_id, status.value, latency),
                )
            )

    def _flush_terminal(self, nb: NodeBatch) -> None:
        if not self._pending_terminal:
            return
        batch = list(self._pending_terminal)
        self._pending_terminal.clear()
        if self.addr.row != 0:
            # Follower commits are not client-observable; their marks need no
            # cross-node ordering, so skip the terminal broadcast.
            return
        for peer in self.row_peers():
            self.send(Message(MsgKind.TERMINAL, self.addr, peer, nb.bid, batch))

    def _node_commit_done(self, nb: NodeBatch) -> None:
        """Last planner on this node finished committing. Holds the cv."""
        nb.commit_done = True
        nb.commit_done_tick = now_ns()
        self.commit_watermark = nb.bid
        self.commit_done_by_col[self.addr.col] = nb.bid
        for peer in self.row_peers():
            self.send(Message(MsgKind.BARRIER, self.addr, peer, nb.bid, "COMMIT"))
        if self.config.sync_granularity is SyncGranularity.NODE:
            self.batch_done_by_col[self.addr.col] = nb.bid
            for peer in self.row_peers():
                self.send(Message(MsgKind.BARRIER, self.addr, peer, nb.bid, "BATCH"))
        if self.config.checkpoint_every and (nb.bid + 1) % self.config.checkpoint_every == 0:
            self.last_checkpoint = take_checkpoint(
                self.store,
                nb.bid,
                self.addr.col,
                self.config.partitions,
                self.config.subranges_effective,
            )
        self.timings.append(self._fold_timings(nb))
        if not self.config.retain_batches:
            self.batches.pop(nb.bid, None)
        self.cv.notify_all()

    def _fold_timings(self, nb: NodeBatch) -> BatchTimings:
        states = list(nb.planner_state.values())
        return BatchTimings(
            batch_id=nb.bid,
            node=self.addr,
            plan_start=min((s.plan_start for s in states if s.plan_start), default=0),
            plan_end=max((s.plan_end for s in states if s.plan_end), default=0),
            deliver_start=min((s.deliver_start for s in states if s.deliver_start), default=0),
            repl_submit=min((s.repl_submit for s in states if s.repl_submit), default=0),
            contrib_done=nb.contrib_done_tick,
            exec_done=nb.exec_done_tick,
            repl_ack=max((s.repl_ack_tick for s in states if s.repl_ack_tick), default=0),
            seal=nb.seal_tick,
            commit_done=nb.commit_done_tick,
        )

    # ------------------------------------------------------------- heartbeats

    def _heartbeat_loop(self) -> None:
        cfg = self.config
        while not self.harness.stopping:
            time.sleep(cfg.heartbeat_interval_s)
            if self.crashed:
                continue
            if self.is_leader:
                for follower in self.column_followers():
                    self.send(Message(MsgKind.HEARTBEAT, self.addr, follower, 0, None))
            else:
                silence = (now_ns() - self.last_heartbeat) / 1e9
                if silence > cfg.heartbeat_interval_s * cfg.heartbeat_misses:
                    try:
                        self._start_election()
                    except (ClusterStopped, FatalClusterError, BatchAbandoned):
                        return

    # ---------------------------------------------------------------- election

    def _column_peer_followers(self) -> list[NodeAddr]:
        return [
            NodeAddr(r, self.addr.col)
            for r in range(1, self.config.rf + 1)
            if r != self.addr.row
            and not self.harness.transport.is_crashed(NodeAddr(r, self.addr.col))
        ]

    def _start_election(self) -> None:
        with self.cv:
            if self._electing or self.is_leader:
                return
            self._electing = True
        # Drain everything already received before reporting a watermark: any
        # batch the dead leader committed was acknowledged by some survivor,
        # so after draining the highest watermark covers every committed batch.
        held = self.repl_receiver.held_keys() if self.repl_receiver else []
        max_held = max((bid for bid, _ in held), default=self.commit_watermark)
        with self.cv:
            self._wait(
                f"pre-election drain through batch {max_held}",
                lambda: self.commit_watermark >= max_held,
            )
            self._election_votes[self.addr.row] = self.commit_watermark
        for peer in self._column_peer_followers():
            self.send(
                Message(
                    MsgKind.ELECT_REQ,
                    self.addr,
                    peer,
                    0,
                    (self.addr.row, self.commit_watermark),
                )
            )
        self._maybe_conclude_election()

    def _on_elect_req(self, msg: Message) -> None:
        row, watermark = msg.payload
        with self.cv:
            self._election_votes[row] = watermark
            electing = self._electing
        if not electing:
            self._start_election()
        else:
            self._maybe_conclude_election()

    def _on_elect_resp(self, msg: Message) -> None:
        self.harness.promote_leader(NodeAddr(msg.payload, self.addr.col))

    def _maybe_conclude_election(self) -> None:
        expected = {self.addr.row} | {p.row for p in self._column_peer_followers()}
        with self.cv:
            if not expected.issubset(self._election_votes.keys()):
                return
            winner_row = elect_leader(dict(self._election_votes))
        if winner_row == self.addr.row:
            for peer in self._column_peer_followers():
                self.send(Message(MsgKind.ELECT_RESP, self.addr, peer, 0, winner_row))
            self.harness.promote_leader(self.addr)

    # ---------------------------------------------------------------- recovery

    def _on_recov_fetch(self, msg: Message) -> None:
        # Serve sealed batches: write-only queues are final at seal time.
        from_bid, to_bid = msg.payload
        records = self.log.slice(from_bid, min(to_bid, self.log.watermark))
        self.send(
            Message(
                MsgKind.RECOV_DATA,
                self.addr,
                msg.sender,
                self.commit_watermark,
                (records, self.commit_watermark),
            )
        )

    def _on_recov_data(self, msg: Message) -> None:
        records, _ = msg.payload
        with self.cv:
            for record in sorted(records, key=lambda r: r.batch_id):
                if record.batch_id <= self.log.watermark:
                    continue
                for queue in record.queues:
                    for key, value in queue.entries:
                        self.store.put(key, value)
                self.log.append_batch(record.batch_id, list(record.queues))
            self.commit_watermark = max(self.commit_watermark, self.log.watermark)
            self.seal_watermark = max(self.seal_watermark, self.commit_watermark)
            for c in self.commit_done_by_col:
                self.commit_done_by_col[c] = max(self.commit_done_by_col[c], self.commit_watermark)
                self.batch_done_by_col[c] = max(self.batch_done_by_col[c], self.commit_watermark)
            self.cv.notify_all()


class ClusterHarness:
    """Builds the node grid, wires transport and replication, drives runs."""

    def __init__(
        self,
        config: ClusterConfig,
        workload: WorkloadConfig | None = None,
        streams: dict[tuple[int, int], list[ClientTxn]] | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self.workload = workload
        self.explicit_streams = streams
        self.stopping = False
        self.stop_bid: int | None = None
        self._stop_lock = threading.Lock()
        self.fatal_error: str | None = None
        self.scheduler = Scheduler()
        if config.transport is TransportKind.TCP:
            self.transport = TcpTransport()
        else:
            self.transport = LoopbackTransport(self.scheduler)
        self.capture = MessageCapture() if config.capture_messages else None
        self.transport.capture = self.capture
        self.client_responses: list[tuple] = []
        self._client_lock = threading.Lock()

        self.nodes: dict[NodeAddr, Node] = {}
        for row in range(config.rf + 1):
            for col in range(config.partitions):
                node = Node(self, NodeAddr(row, col))
                self.nodes[node.addr] = node
                self.transport.register(node.addr, node.on_message)
        for col in range(config.partitions):
            self.transport.register(NodeAddr(CLIENT_ROW, col), self._client_sink)

        self.brokers: dict[int, Broker] = {}
        self._wire_replication()
        self._wire_streams()
        if config.transport is TransportKind.LOOPBACK:
            self._wire_latencies()

    # ------------------------------------------------------------------ wiring

    def _wire_replication(self) -> None:
        cfg = self.config
        for col in range(cfg.partitions):
            leader = self.nodes[NodeAddr(0, col)]
            followers = [NodeAddr(r, col) for r in range(1, cfg.rf + 1)]
            if cfg.rf > 0 and cfg.repl_backend is ReplBackend.BROKER:
                broker = Broker(col, self.transport.send, self.scheduler.after, cfg.repl_latency_s)
                broker.subscribers = followers
                self.brokers[col] = broker
                self.transport.register(broker.addr, broker.on_message)
                targets: list[NodeAddr] = [broker.addr]
                required = 1
                fetch_addr = broker.addr
            else:
                targets = followers
                required = follower_acks_required(cfg.rf)
                fetch_addr = leader.addr
            leader.repl_submitter = ReplicationSubmitter(
                leader.addr,
                targets,
                required if cfg.rf > 0 else 0,
                self.transport.send,
                self.scheduler.after,
                cfg.compression,
                cfg.repl_timeout_s,
            )
            for addr in followers:
                self.nodes[addr].repl_receiver = ReplicationReceiver(
                    addr, fetch_addr, self.transport.send
                )

    def _wire_streams(self) -> None:
        cfg = self.config
        for node in self.leader_nodes():
            for thread in range(cfg.planners):
                queue = ClientTransactionQueue()
                if self.explicit_streams is not None:
                    queue.extend(self.explicit_streams.get((node.addr.col, thread), []))
                elif self.workload is not None:
                    queue.generator = TxnGenerator(
                        self.workload,
                        cfg.partitions,
                        stream_id=f"{node.addr.col}.{thread}",
                        client_id=node.addr.col * cfg.planners + thread,
                    )
                node.streams[thread] = queue

    def _wire_latencies(self) -> None:
        cfg = self.config
        if cfg.delivery_latency_s > 0:
            for kind in (
                MsgKind.REMOTE_EQ,
                MsgKind.EQ_ACK,
                MsgKind.DEP_VALUE,
                MsgKind.EXEC_SUMMARY,
                MsgKind.TERMINAL,
                MsgKind.BARRIER,
            ):
                self.transport.set_kind_latency(kind, cfg.delivery_latency_s)
        if cfg.repl_latency_s > 0 and cfg.repl_backend is ReplBackend.QUORUM:
            for kind in (MsgKind.REPL_DATA, MsgKind.REPL_ACK):
                self.transport.set_kind_latency(kind, cfg.repl_latency_s)

    def _client_sink(self, msg: Message) -> None:
        with self._client_lock:
            self.client_responses.append(msg.payload)

    # ----------------------------------------------------------------- control

    def leader_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.addr.row == 0]

    def instance_nodes(self, row: int) -> list[Node]:
        return [n for n in self.nodes.values() if n.addr.row == row]

    def fatal(self, reason: str) -> None:
        with self._stop_lock:
            if self.fatal_error is None:
                self.fatal_error = reason
            self.stopping = True
        self._notify_all()

    def _notify_all(self) -> None:
        for node in self.nodes.values():
            with node.cv:
                node.cv.notify_all()

    def start(self, num_batches: int | None = None) -> None:
        if num_batches is not None:
            self.stop_bid = num_batches - 1
        for node in self.nodes.values():
            node.start()

    def request_stop(self) -> None:
        """Duration-mode stop: commit barriers bound planner skew to one
        epoch, so two extra epochs let every planner finish evenly."""
        with self._stop_lock:
            if self.stop_bid is None:
                observed = max(n.commit_watermark for n in self.leader_nodes())
                self.stop_bid = observed + 2

    def wait_leaders_done(self, timeout: float = 300.0) -> None:
        deadline = time.monotonic() + timeout
        for node in self.leader_nodes():
            node.join_planners(max(0.0, deadline - time.monotonic()))
        if self.fatal_error:
            raise FatalClusterError(self.fatal_error)

    def wait_drained(self, timeout: float = 120.0) -> None:
        """Wait until every live node committed through the stop batch."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.fatal_error:
                raise FatalClusterError(self.fatal_error)
            live = [
                n
                for n in self.nodes.values()
                if not n.crashed and not self.transport.is_crashed(n.addr)
            ]
            if all(n.commit_watermark >= self.stop_bid for n in live):
                return
            time.sleep(0.005)
        watermarks = {str(n.addr): n.commit_watermark for n in self.nodes.values()}
        raise FatalClusterError(f"drain timeout: watermarks {watermarks}")

    def stop(self) -> None:
        self.stopping = True
        self._notify_all()
        for node in self.nodes.values():
            for t in node._threads:
                t.join(timeout=5.0)
        self.transport.stop()
        self.scheduler.stop()

    def release_followers(self) -> None:
        """End of a deferred-apply measure window: let replicas drain."""
        for node in self.nodes.values():
            with node.cv:
                node.apply_paused = False
                node.cv.notify_all()

    def run(self, num_batches: int) -> "RunResult":
        self.start(num_batches)
        try:
            self.wait_leaders_done()
            if self.config.defer_follower_apply:
                self.release_followers()
            self.wait_drained()
        finally:
            self.stop()
        if self.fatal_error:
            raise FatalClusterError(self.fatal_error)
        return RunResult(self)

    # ------------------------------------------------------------------ faults

    def crash_node(self, addr: NodeAddr) -> None:
        node = self.nodes[addr]
        with node.cv:
            node.crashed = True
            node.cv.notify_all()
        self.transport.crash(addr)

    def recover_follower(self, addr: NodeAddr) -> None:
        """Restart a crashed follower instance.

        A cluster instance advances in lockstep (each node needs every peer's
        plan contributions and summaries), so a crashed member stalls its
        whole row and the row recovers as a unit: every node in it rebuilds
        from checkpoint plus its own durability log, fetches the write-only
        queues it missed from its column leader up to a common watermark, and
        resumes receiving replicated plans from the next epoch.
        """
        if addr.row == 0:
            raise ValidationError("only followers recover in place")
        # The row resumes at a common epoch that no member is already past.
        target = max(
            min(
                self.nodes[NodeAddr(0, col)].commit_watermark
                for col in range(self.config.partitions)
            ),
            max(
                self.nodes[NodeAddr(addr.row, col)].log.watermark
                for col in range(self.config.partitions)
            ),
        )
        for col in range(self.config.partitions):
            peer = self.nodes[NodeAddr(addr.row, col)]
            with peer.cv:
                peer.batches.clear()
                fresh = PartitionStore(col, self.config.record_size)
                fresh.populate(
                    peer._all_keys(), lambda k: initial_value(k, self.config.record_size)
                )
                ckpt = peer.last_checkpoint
                if ckpt is None:
                    ckpt = take_checkpoint(fresh, -1, col, self.config.partitions,
                                           self.config.subranges_effective)
                rebuilt = recover_node(peer.log.records, ckpt)
                for key, value in rebuilt.items_sorted():
                    fresh.put(key, value)
                peer.store = fresh
                peer.crashed = False
                peer.resume_bid = target + 1
                peer.resume_epoch += 1
                for c in peer.commit_done_by_col:
                    peer.commit_done_by_col[c] = max(peer.commit_done_by_col[c], target)
                    peer.batch_done_by_col[c] = max(peer.batch_done_by_col[c], target)
                if peer.repl_receiver is not None:
                    for p in range(self.config.planners):
                        peer.repl_receiver.set_cursor(Priority(col, p), target + 1)
                peer.cv.notify_all()
            self.transport.recover(peer.addr)
            peer.send(
                Message(
                    MsgKind.RECOV_FETCH,
                    peer.addr,
                    self.column_leader(col),
                    peer.log.watermark + 1,
                    (peer.log.watermark + 1, target),
                )
            )

    def column_leader(self, col: int) -> NodeAddr:
        for node in self.nodes.values():
            if node.addr.col == col and node.is_leader and not node.crashed:
                return node.addr
        return NodeAddr(0, col)

    def promote_leader(self, addr: NodeAddr) -> None:
        """Promote an elected follower to column leader (single-column runs)."""
        if self.config.partitions != 1:
            raise ValidationError("leader promotion is supported for partitions=1")
        node = self.nodes[addr]
        with node.cv:
            if node.is_leader:
                return
            node.is_leader = True
            survivors = [
                NodeAddr(r, addr.col)
                for r in range(1, self.config.rf + 1)
                if r != addr.row
                and not self.transport.is_crashed(NodeAddr(r, addr.col))
            ]
            submitter = ReplicationSubmitter(
                addr,
                survivors,
                follower_acks_required(len(survivors)),
                self.transport.send,
                self.scheduler.after,
                self.config.compression,
                self.config.repl_timeout_s,
            )
            if node.repl_receiver is not None:
                for key in node.repl_receiver.held_keys():
                    frame = node.repl_receiver.held_frame(key)
                    if frame is not None:
                        submitter._frames[key] = frame
            node.repl_submitter = submitter
            resume = node.commit_watermark + 1
            node.resume_bid = resume
            node.resume_epoch += 1
            if self.workload is not None:
                # Deterministic stream replay: every committed batch consumed
                # exactly batch_size transactions from the planner's stream.
                for thread in range(self.config.planners):
                    generator = TxnGenerator(
                        self.workload,
                        self.config.partitions,
                        stream_id=f"{addr.col}.{thread}",
                        client_id=addr.col * self.config.planners + thread,
                    )
                    generator.skip(resume * self.config.batch_size)
                    queue = ClientTransactionQueue()
                    queue.generator = generator
                    node.streams[thread] = queue
            node.cv.notify_all()
        for other in self.nodes.values():
            if other.addr.col == addr.col and other.addr != addr:
                other.recovery_source = addr
                if other.repl_receiver is not None:
                    other.repl_receiver.fetch_addr = addr

    # ------------------------------------------------------------ test surface

    def instance_snapshot(self, row: int) -> bytes:
        return b"".join(
            self.nodes[NodeAddr(row, col)].store.snapshot_bytes()
            for col in range(self.config.partitions)
        )

    def merged_trace(self, row: int = 0) -> list[TraceEntry]:
        entries: list[TraceEntry] = []
        for node in self.instance_nodes(row):
            for nb in node.batches.values():
                entries.extend(nb.runtime.trace)
        entries.sort(key=lambda e: e.seq)
        return entries

    def commit_records(self, row: int = 0) -> list[tuple[TxnId, TxnStatus, int, int]]:
        records = []
        for node in self.instance_nodes(row):
            records.extend(node.commit_log)
        records.sort(key=lambda r: r[2])
        return records

    def routing_ok(self) -> bool:
        if self.capture is None:
            raise ValidationError("run with capture_messages=True to check routing")
        return routing_check(self.capture.records)


@dataclass
class RunResult:
    """Post-run metrics and accessors over a finished harness."""

    harness: ClusterHarness

    def _statuses(self, status: TxnStatus) -> int:
        return sum(
            1
            for node in self.harness.leader_nodes()
            for (_, s, _, _) in node.commit_log
            if s is status
        )

    @property
    def committed(self) -> int:
        return self._statuses(TxnStatus.COMMITTED)

    @property
    def aborted(self) -> int:
        return self._statuses(TxnStatus.ABORTED)

    @property
    def latencies_ns(self) -> list[int]:
        return [r.latency_ns for node in self.harness.leader_nodes() for r in node.responses]

    @property
    def timings(self) -> list[BatchTimings]:
        return [t for node in self.harness.leader_nodes() for t in node.timings]

    def payload_bytes(self) -> tuple[int, int]:
        raw = sent = 0
        for node in self.harness.leader_nodes():
            if node.repl_submitter is not None:
                raw += node.repl_submitter.bytes_raw
                sent += node.repl_submitter.bytes_sent
        return raw, sent

    def leader_window_s(self) -> float:
        """Wall time from the first leader plan to the last leader commit.

        Client-visible throughput is measured over this window; follower
        instances may still be draining their own pipelines afterwards.
        """
        starts = [t.plan_start for t in self.timings if t.plan_start]
        ends = [t.commit_done for t in self.timings if t.commit_done]
        if not starts or not ends:
            return 0.0
        return (max(ends) - min(starts)) / 1e9

    def throughput_tps(self) -> float:
        window = self.leader_window_s()
        if window <= 0:
            return 0.0
        return (self.committed + self.aborted) / window
