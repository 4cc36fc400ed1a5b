"""Commitment: terminal statuses in planning order among conflicts.

Statuses are a pure function of the batch: the logic-abort set plus the
transitive closure of read-from edges, both assembled from every node's
execution summary, so every replica decides identically without extra
coordination. What does need coordination is the observable commit order:
a transaction is marked terminal only after all of its conflict predecessors
(earlier transactions it read from, overwrote, or anti-depends on) are
terminal, which makes commit timestamps of conflicting transactions follow
planning order cluster-wide.

Rollback restores before-images per key by stripping the aborted tail of the
key's write chain; a committed blind write over an aborted one is preserved,
matching a serial execution that skips aborted transactions.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .core import TransactionContext, TxnId, TxnStatus


def cascade_closure(
    logic_aborts: set[TxnId], read_from: dict[TxnId, set[TxnId]]
) -> set[TxnId]:
    """All transactions doomed by the batch's logic aborts.

    A transaction aborts if it aborted itself or read a value written by any
    transaction that aborts; the closure follows read-from edges transitively
    and is deterministic across replicas.
    """
    readers_of: dict[TxnId, list[TxnId]] = {}
    for reader, writers in read_from.items():
        for writer in writers:
            readers_of.setdefault(writer, []).append(reader)
    doomed = set(logic_aborts)
    frontier = list(logic_aborts)
    while frontier:
        writer = frontier.pop()
        for reader in readers_of.get(writer, ()):
            if reader not in doomed:
                doomed.add(reader)
                frontier.append(reader)
    return doomed


def resolve_rollbacks(
    write_log: dict[int, list[tuple[TxnId, bytes]]], abort_set: set[TxnId]
) -> dict[int, bytes]:
    """Restoration values for keys whose latest writes were all aborted.

    Each key's write chain is walked from the tail: aborted writes are
    stripped until a committed write (kept as-is) or the chain start (restore
    the pre-batch value) is reached. Aborted writes that a later committed
    write already overwrote need no restoration.
    """
    restores: dict[int, bytes] = {}
    for key, entries in write_log.items():
        i = len(entries)
        while i > 0 and entries[i - 1][0] in abort_set:
            i -= 1
        if i < len(entries):
            restores[key] = entries[i][1]
    return restores


def committed_written_keys(
    write_log: dict[int, list[tuple[TxnId, bytes]]], abort_set: set[TxnId]
) -> list[int]:
    """Keys that retain at least one committed write this batch."""
    return sorted(
        key
        for key, entries in write_log.items()
        if any(txn not in abort_set for txn, _ in entries)
    )


def commit_txn(
    tc: TransactionContext,
    abort_set: set[TxnId],
    preds: set[TxnId],
    board: dict[TxnId, TxnStatus],
) -> bool:
    """Drive one context to a terminal status if it is decidable now.

    Returns False while fragments are outstanding or a conflict predecessor
    is not yet terminal; True once the context is terminal (an abort is a
    terminal outcome too, so the pending queue drains past it).
    """
    if tc.status is not TxnStatus.PENDING:
        return True
    if not tc.all_fragments_done:
        return False
    for pred in preds:
        if pred not in board:
            return False
    status = TxnStatus.ABORTED if (tc.txn_id in abort_set or tc.aborted) else TxnStatus.COMMITTED
    tc.mark(status)
    board[tc.txn_id] = status
    return True


@dataclass
class CommitRecord:
    txn_id: TxnId
    status: TxnStatus
    tick: int
    seq: int


@dataclass
class CommitReport:
    committed: int = 0
    aborted: int = 0
    records: list[CommitRecord] = field(default_factory=list)


class BatchCommitter:
    """One planner's commitment pass over its batch shard.

    First iterates the shard in planning order, pushing undecidable
    transactions onto a FIFO pending queue; then drains the queue from the
    head, popping only once the head turns terminal. ``wait_progress`` blocks
    (releasing the node lock) until new acks or terminal marks arrive and is
    where the pipeline watchdog lives.
    """

    def __init__(
        self,
        txns_in_order: Iterable[TxnId],
        tcs: dict[TxnId, TransactionContext],
        abort_set: set[TxnId],
        preds: dict[TxnId, set[TxnId]],
        board: dict[TxnId, TxnStatus],
        on_terminal: Callable[[TransactionContext, TxnStatus, int], None],
        wait_progress: Callable[[], None],
        flush: Callable[[], None] = lambda: None,
        clock: Callable[[], int] = time.monotonic_ns,
    ) -> None:
        self.txns = list(txns_in_order)
        self.tcs = tcs
        self.abort_set = abort_set
        self.preds = preds
        self.board = board
        self.on_terminal = on_terminal
        self.wait_progress = wait_progress
        self.flush = flush
        self.clock = clock
        self._seq = 0
        self.report = CommitReport()

    def _try(self, txn: TxnId) -> bool:
        tc = self.tcs[txn]
        if not commit_txn(tc, self.abort_set, self.preds.get(txn, set()), self.board):
            return False
        tick = self.clock()
        if tc.status is TxnStatus.COMMITTED:
            self.report.committed += 1
        else:
            self.report.aborted += 1
        self.report.records.append(CommitRecord(txn, tc.status, tick, self._seq))
        self._seq += 1
        self.on_terminal(tc, tc.status, tick)
        return True

    def run(self) -> CommitReport:
        pending: deque[TxnId] = deque()
        for txn in self.txns:
            if not self._try(txn):
                pending.append(txn)
        while pending:
            if self._try(pending[0]):
                pending.popleft()
                continue
            self.flush()
            self.wait_progress()
        self.flush()
        return self.report
