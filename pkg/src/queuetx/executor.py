"""Speculative queue execution in global priority order.

Worker threads repeatedly claim the highest-priority eligible queue, drain
its fragments, and acknowledge or update transaction contexts. A queue is
eligible once every planner contribution ahead of its priority has been
installed and every conflicting higher-priority queue on its slot has
completed; that local rule is what upholds the cluster-wide ordering of
conflicting operations.

Cross-slot value dependencies park the claimed queue (cursor preserved, claim
retained) instead of blocking the thread; the queue resumes at the same
operation when the value arrives, so intra-queue order is never disturbed and
a single worker can serve mutually dependent slots without deadlocking.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from .core import (
    BatchMetadata,
    DepRead,
    ExecutionQueue,
    Fragment,
    OpKind,
    Operation,
    PartitionStore,
    SlotKey,
    SlotPhase,
    TxnId,
    combine_rmw,
    slot_of,
)

_trace_seq = itertools.count()


class TraceEntry(NamedTuple):
    """One executed operation; the merged per-batch trace is the evidence for
    the global execution-order and exactly-once properties."""

    priority: tuple[int, int]
    partition: int
    subrange: int
    txn_id: TxnId
    op_index: int
    tick: int
    seq: int


@dataclass
class BatchRuntime:
    """Per-node execution state for one batch."""

    bm: BatchMetadata
    store: PartitionStore
    partitions: int
    subranges: int
    capture_trace: bool = False
    # Conflict-predecessor tracking feeds commit-order gating, which only
    # matters where commits are client-observable (the leader instance).
    track_preds: bool = True
    # Context before-images serve coordinator-side inspection; rollback
    # itself replays the per-key write log, which is always kept.
    record_images: bool = True

    dep_values: dict[tuple[TxnId, int], bytes] = field(default_factory=dict)
    parked: dict[tuple[TxnId, int], SlotKey] = field(default_factory=dict)
    last_writer: dict[int, TxnId] = field(default_factory=dict)
    readers_since: dict[int, set[TxnId]] = field(default_factory=dict)
    write_log: dict[int, list[tuple[TxnId, bytes]]] = field(default_factory=dict)
    written: set[tuple[TxnId, int]] = field(default_factory=set)
    logic_aborts: set[TxnId] = field(default_factory=set)
    read_from: dict[TxnId, set[TxnId]] = field(default_factory=dict)
    preds: dict[TxnId, set[TxnId]] = field(default_factory=dict)
    trace: list[TraceEntry] = field(default_factory=list)
    executed_ops: int = 0
    first_op_tick: int = 0
    last_op_tick: int = 0

    def local_summary(self) -> dict:
        """Facts discovered while executing on this node, for the batch-wide
        abort closure and commit-order gating on every peer."""
        return {
            "aborts": set(self.logic_aborts),
            "read_from": {t: set(s) for t, s in self.read_from.items() if s},
            "preds": {t: set(s) for t, s in self.preds.items() if s},
        }


class ExecHooks:
    """Node-side effects the engine triggers; overridden by the cluster node."""

    def send_dep(self, runtime: BatchRuntime, dep: DepRead, txn: TxnId, value: bytes) -> None:
        raise NotImplementedError

    def eq_finished(
        self,
        runtime: BatchRuntime,
        eq: ExecutionQueue,
        completed: list[TxnId],
        aborted: list[TxnId],
    ) -> None:
        raise NotImplementedError

    def batch_executed(self, runtime: BatchRuntime) -> None:
        raise NotImplementedError


class ExecutionEngine:
    """Claims and drains queues for one node; shared by its worker threads."""

    def __init__(
        self,
        cv: threading.Condition,
        hooks: ExecHooks,
        clock: Callable[[], int] = time.monotonic_ns,
    ) -> None:
        self.cv = cv
        self.hooks = hooks
        self.clock = clock

    # -- scheduling --------------------------------------------------------

    def find_work(self, runtime: BatchRuntime) -> SlotKey | None:
        """Pick the highest-priority eligible or resumable queue. Caller holds
        the node condition; the returned slot is claimed (RUNNING)."""
        bm = runtime.bm
        best: SlotKey | None = None
        for lane in bm.by_subrange.values():
            for sk in lane:
                state = bm.slots[sk]
                if state.phase is SlotPhase.DONE:
                    continue
                # First unfinished slot in the lane is the only candidate:
                # anything behind it would break per-slot priority order.
                candidate = None
                if state.phase is SlotPhase.READY and bm.prefix_covers(sk.priority):
                    candidate = sk
                elif state.phase is SlotPhase.PARKED and state.resumable:
                    candidate = sk
                if candidate is not None and (best is None or candidate.priority < best.priority):
                    best = candidate
                break
        if best is not None:
            state = runtime.bm.slots[best]
            state.phase = SlotPhase.RUNNING
            state.resumable = False
        return best

    def deliver_dep_value(self, runtime: BatchRuntime, txn: TxnId, op_index: int, value: bytes) -> None:
        """Record an arrived dependency value; wakes the parked queue if any.
        Caller holds the node condition."""
        key = (txn, op_index)
        runtime.dep_values[key] = value
        parked_slot = runtime.parked.pop(key, None)
        if parked_slot is not None:
            runtime.bm.slots[parked_slot].resumable = True

    # -- execution ---------------------------------------------------------

    def run_claim(self, runtime: BatchRuntime, sk: SlotKey) -> bool:
        """Execute the claimed queue until it parks or completes.

        Returns True when the queue completed. Called without the node
        condition; state transitions and completion take it briefly.
        """
        state = runtime.bm.slots[sk]
        eq = state.eq
        while state.fragment_idx < len(eq.fragments):
            frag = eq.fragments[state.fragment_idx]
            if state.steps is None:
                state.steps = frag.steps()
            while state.step_idx < len(state.steps):
                idx, op, dep = state.steps[state.step_idx]
                if dep is not None:
                    # Dependency reads always run, even for a locally aborted
                    # transaction: the consumer fragment on another node has
                    # no way to know and must not wait forever.
                    self._exec_dep_read(runtime, eq, frag, dep)
                    state.step_idx += 1
                    continue
                assert op is not None
                if frag.txn_id in state.abort_fired:
                    # Abort already fired earlier in this fragment: remaining
                    # ops here are no-ops (other slots are unaffected).
                    state.step_idx += 1
                    continue
                if op.kind is OpKind.RMW and self._dep_is_remote(runtime, frag, op):
                    dep_key = (frag.txn_id, idx)
                    value = runtime.dep_values.get(dep_key)
                    if value is None:
                        with self.cv:
                            value = runtime.dep_values.get(dep_key)
                            if value is None:
                                state.phase = SlotPhase.PARKED
                                state.waiting_on = dep_key
                                runtime.parked[dep_key] = sk
                                return False
                    self._exec_op(runtime, eq, state, frag, idx, op, value)
                else:
                    self._exec_op(runtime, eq, state, frag, idx, op, None)
                state.step_idx += 1
            state.fragment_idx += 1
            state.step_idx = 0
            state.steps = None
        self._complete(runtime, sk)
        return True

    def drain(self, runtime: BatchRuntime) -> None:
        """Single-threaded helper: execute until the batch is done locally.
        Dependencies must resolve via the hooks (or be local)."""
        while not runtime.bm.done():
            with self.cv:
                sk = self.find_work(runtime)
            if sk is None:
                if runtime.parked:
                    raise RuntimeError("drain stalled: unresolved dependency values")
                raise RuntimeError("drain stalled: no eligible queue")
            self.run_claim(runtime, sk)

    def _dep_is_remote(self, runtime: BatchRuntime, frag: Fragment, op: Operation) -> bool:
        return slot_of(op.dep_source, runtime.partitions, runtime.subranges) != (
            frag.partition,
            frag.subrange,
        )

    def _exec_dep_read(
        self, runtime: BatchRuntime, eq: ExecutionQueue, frag: Fragment, dep: DepRead
    ) -> None:
        value = runtime.store.get(dep.source_key)
        self._record_read(runtime, frag.txn_id, dep.source_key)
        self.hooks.send_dep(runtime, dep, frag.txn_id, value)

    def _exec_op(
        self,
        runtime: BatchRuntime,
        eq: ExecutionQueue,
        state,
        frag: Fragment,
        idx: int,
        op: Operation,
        dep_value: bytes | None,
    ) -> None:
        txn = frag.txn_id
        store = runtime.store
        if op.kind is OpKind.READ:
            store.get(op.key)
            self._record_read(runtime, txn, op.key)
        elif op.kind is OpKind.UPDATE:
            self._record_write(runtime, txn, op.key, op.write_value)
        elif op.kind is OpKind.RMW:
            if dep_value is None:
                dep_value = store.get(op.dep_source)
                self._record_read(runtime, txn, op.dep_source)
            target = store.get(op.key)
            self._record_read(runtime, txn, op.key)
            self._record_write(runtime, txn, op.key, combine_rmw(target, dep_value))
        elif op.kind is OpKind.COND_ABORT:
            value = store.get(op.key)
            self._record_read(runtime, txn, op.key)
            if value[0] < op.abort_threshold:
                state.abort_fired.add(txn)
                runtime.logic_aborts.add(txn)
        runtime.executed_ops += 1
        if runtime.capture_trace:
            tick = self.clock()
            if runtime.first_op_tick == 0:
                runtime.first_op_tick = tick
            runtime.last_op_tick = tick
            runtime.trace.append(
                TraceEntry(
                    tuple(eq.priority), eq.partition, eq.subrange, txn, idx, tick, next(_trace_seq)
                )
            )

    def _record_read(self, runtime: BatchRuntime, txn: TxnId, key: int) -> None:
        writer = runtime.last_writer.get(key)
        if writer is not None and writer != txn:
            runtime.read_from.setdefault(txn, set()).add(writer)
            if runtime.track_preds:
                runtime.preds.setdefault(txn, set()).add(writer)
        if runtime.track_preds:
            runtime.readers_since.setdefault(key, set()).add(txn)

    def _record_write(self, runtime: BatchRuntime, txn: TxnId, key: int, value: bytes) -> None:
        prior = runtime.store.get(key)
        if runtime.track_preds:
            pset = runtime.preds.setdefault(txn, set())
            writer = runtime.last_writer.get(key)
            if writer is not None and writer != txn:
                pset.add(writer)
            for reader in runtime.readers_since.get(key, ()):
                if reader != txn:
                    pset.add(reader)
            runtime.readers_since[key] = set()
        runtime.write_log.setdefault(key, []).append((txn, prior))
        if runtime.record_images and (txn, key) not in runtime.written:
            runtime.written.add((txn, key))
            tc = runtime.bm.tc_store.get(txn)
            if tc is not None:
                tc.before_images.append((key, prior))
        runtime.store.put(key, value)
        runtime.last_writer[key] = txn

    def _complete(self, runtime: BatchRuntime, sk: SlotKey) -> None:
        state = runtime.bm.slots[sk]
        eq = state.eq
        completed = [frag.txn_id for frag in eq.fragments]
        aborted = [txn for txn in completed if txn in state.abort_fired]
        with self.cv:
            runtime.bm.mark_completed_locked(sk)
            batch_done = runtime.bm.done_locked()
            self.cv.notify_all()
        self.hooks.eq_finished(runtime, eq, completed, aborted)
        if batch_done:
            self.hooks.batch_executed(runtime)
