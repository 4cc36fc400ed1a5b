"""Planning: turn client transactions into priority-tagged queues and contexts.

A planner analyzes each transaction's full read/write set (known up front,
stored-procedure style), splits it into one fragment per touched
(partition, subrange) slot, and merges fragments into that slot's queue in
arrival order. Cross-slot RMW dependencies plant a dependency read on the
source slot and an unresolved counter on the target fragment.

The thread loop that drives planning per batch lives in the cluster module;
everything here is deterministic and side-effect free, which is what makes
leader plans and follower-installed plans bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import (
    DepRead,
    ExecutionQueue,
    Fragment,
    OpKind,
    Priority,
    Transaction,
    TransactionContext,
    TxnId,
    ValidationError,
    slot_of,
)
from .workload import ClientTxn


class ClientTransactionQueue:
    """Per-planner FIFO of incoming client transactions.

    May be backed by a finite list, a deterministic generator (saturating
    open-loop client), or both; pop order always equals push order.
    """

    def __init__(self, generator=None) -> None:
        self._items: list[ClientTxn] = []
        self._cursor = 0
        self.generator = generator

    def push(self, txn: ClientTxn) -> None:
        self._items.append(txn)

    def extend(self, txns) -> None:
        self._items.extend(txns)

    def pop(self) -> ClientTxn | None:
        if self._cursor < len(self._items):
            item = self._items[self._cursor]
            self._cursor += 1
            return item
        if self.generator is not None:
            return self.generator.next_txn()
        return None

    def __len__(self) -> int:
        backlog = len(self._items) - self._cursor
        return backlog


@dataclass
class PlanBatch:
    """One planner's batch under construction."""

    batch_id: int
    priority: Priority
    eqs: dict[tuple[int, int], ExecutionQueue] = field(default_factory=dict)
    tc_shard: dict[TxnId, TransactionContext] = field(default_factory=dict)
    planned: int = 0

    def all_eqs(self) -> list[ExecutionQueue]:
        return [self.eqs[slot] for slot in sorted(self.eqs)]

    def eqs_for_partition(self, partition: int) -> list[ExecutionQueue]:
        return [self.eqs[slot] for slot in sorted(self.eqs) if slot[0] == partition]


def plan_message(
    txn: Transaction, partitions: int, subranges: int
) -> tuple[dict[tuple[int, int], Fragment], TransactionContext]:
    """Split one transaction into per-slot fragments plus its fresh context.

    The context's total_fragments counts every produced fragment, including
    pure dependency-read fragments that carry no operations of their own.
    """
    if not txn.operations:
        raise ValidationError(f"{txn.txn_id}: empty transaction")
    ops_by_slot: dict[tuple[int, int], list[tuple[int, object]]] = {}
    dep_reads: dict[tuple[int, int], list[DepRead]] = {}
    unresolved: dict[tuple[int, int], int] = {}
    for idx, op in enumerate(txn.operations):
        slot = slot_of(op.key, partitions, subranges)
        ops_by_slot.setdefault(slot, []).append((idx, op))
        if op.kind is OpKind.RMW:
            src_slot = slot_of(op.dep_source, partitions, subranges)
            if src_slot != slot:
                dep_reads.setdefault(src_slot, []).append(
                    DepRead(idx, op.dep_source, slot[0])
                )
                unresolved[slot] = unresolved.get(slot, 0) + 1
    fragments: dict[tuple[int, int], Fragment] = {}
    for slot in sorted(set(ops_by_slot) | set(dep_reads)):
        fragments[slot] = Fragment(
            txn_id=txn.txn_id,
            partition=slot[0],
            subrange=slot[1],
            ops=tuple(ops_by_slot.get(slot, ())),
            dep_reads=tuple(sorted(dep_reads.get(slot, ()))),
            unresolved_deps=unresolved.get(slot, 0),
        )
    tc = TransactionContext(
        txn_id=txn.txn_id,
        total_fragments=len(fragments),
        client_id=txn.client_id,
    )
    return fragments, tc


def merge_eqs(
    batch: PlanBatch, insertions: dict[tuple[int, int], Fragment], tc: TransactionContext
) -> PlanBatch:
    """Append one transaction's fragments to the batch's queues in arrival order."""
    if tc.txn_id in batch.tc_shard:
        raise ValidationError(f"{tc.txn_id} already planned in batch {batch.batch_id}")
    for slot, fragment in insertions.items():
        eq = batch.eqs.get(slot)
        if eq is None:
            eq = ExecutionQueue(
                batch_id=batch.batch_id,
                priority=batch.priority,
                partition=slot[0],
                subrange=slot[1],
            )
            batch.eqs[slot] = eq
        eq.fragments.append(fragment)
    batch.tc_shard[tc.txn_id] = tc
    batch.planned += 1
    return batch


def batch_ready(planned: int, batch_size: int, elapsed_s: float, timeout_s: float) -> bool:
    """Count-or-timeout readiness; an empty batch is never ready."""
    if planned >= batch_size:
        return True
    return planned >= 1 and elapsed_s >= timeout_s


def plan_client_txn(
    batch: PlanBatch,
    client_txn: ClientTxn,
    partitions: int,
    subranges: int,
) -> Transaction:
    """Assign the next txn id in this batch and plan the transaction into it."""
    txn = Transaction(
        txn_id=TxnId(
            batch.batch_id,
            batch.priority.node_rank,
            batch.priority.thread_rank,
            batch.planned,
        ),
        client_id=client_txn.client_id,
        operations=tuple(client_txn.operations),
    )
    fragments, tc = plan_message(txn, partitions, subranges)
    merge_eqs(batch, fragments, tc)
    return txn
