"""Core domain types for the queue-oriented deterministic transaction engine.

Record keys map to (partition, subrange) slots through plain modular
arithmetic, and planner threads carry a static total priority order. Every
other module builds on these two facts: conflicting work always lands in the
same slot, and slots are drained in priority order.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

DEFAULT_RECORD_SIZE = 100


class ValidationError(ValueError):
    """A transaction or configuration value violates a structural constraint."""


def partition_of(key: int, partitions: int) -> int:
    """Partition index of a record key (deterministic, total)."""
    if partitions < 1:
        raise ValidationError("partition count must be >= 1")
    return key % partitions


def subrange_of(key: int, partitions: int, subranges: int) -> int:
    """Sub-range index of a record key within its partition."""
    if partitions < 1 or subranges < 1:
        raise ValidationError("partition and subrange counts must be >= 1")
    return (key // partitions) % subranges


def slot_of(key: int, partitions: int, subranges: int) -> tuple[int, int]:
    """(partition, subrange) pair a key maps to."""
    return (key % partitions, (key // partitions) % subranges)


class Priority(NamedTuple):
    """Static planner priority.

    Lower tuples sort first and win conflicts; the lexicographic order on
    (node_rank, thread_rank) is a strict total order because no two planner
    threads in a cluster instance share both ranks.
    """

    node_rank: int
    thread_rank: int


def priority_less(a: Priority, b: Priority) -> bool:
    """True iff ``a`` outranks ``b``; irreflexive, lexicographic."""
    return tuple(a) < tuple(b)


class TxnId(NamedTuple):
    """Globally unique transaction id.

    The tuple sorts in planning order: batches are epochs, then planner
    priority, then per-planner arrival sequence.
    """

    batch_id: int
    node_rank: int
    thread_rank: int
    seq: int

    @property
    def priority(self) -> Priority:
        return Priority(self.node_rank, self.thread_rank)


class OpKind(enum.IntEnum):
    READ = 0
    UPDATE = 1
    RMW = 2
    COND_ABORT = 3


@dataclass(slots=True)
class Operation:
    """One record operation inside a transaction.

    RMW reads ``dep_source`` and folds it into ``key``'s value (byte-wise
    addition mod 256); when the two records live in different slots this is a
    cross-slot data dependency. COND_ABORT aborts the whole transaction when
    the first byte of ``key``'s current value is below ``abort_threshold``.
    Treated as immutable after construction.
    """

    kind: OpKind
    key: int
    write_value: bytes | None = None
    dep_source: int | None = None
    abort_threshold: int | None = None

    def __post_init__(self) -> None:
        if self.key < 0:
            raise ValidationError("record keys are non-negative")
        if self.kind is OpKind.UPDATE and self.write_value is None:
            raise ValidationError("UPDATE requires write_value")
        if self.kind is OpKind.RMW and self.dep_source is None:
            raise ValidationError("RMW requires dep_source")
        if self.kind is OpKind.COND_ABORT and self.abort_threshold is None:
            raise ValidationError("COND_ABORT requires abort_threshold")
        if self.kind is OpKind.READ and (
            self.write_value is not None
            or self.dep_source is not None
            or self.abort_threshold is not None
        ):
            raise ValidationError("READ takes no payload")


def combine_rmw(target: bytes, source: bytes) -> bytes:
    """Deterministic, order-sensitive RMW fold: byte-wise addition mod 256."""
    if len(target) != len(source):
        raise ValidationError("RMW operands must have equal length")
    return bytes((a + b) & 0xFF for a, b in zip(target, source))


@dataclass(frozen=True)
class Transaction:
    txn_id: TxnId
    client_id: int
    operations: tuple[Operation, ...]

    def __post_init__(self) -> None:
        if not self.operations:
            raise ValidationError("transaction has no operations")


class DepRead(NamedTuple):
    """Producer-side record of a cross-slot RMW dependency.

    The owning fragment reads ``source_key`` at its deterministic position in
    the slot order and ships the value to the consumer fragment (same txn,
    ``op_index``) on the node owning ``target_partition``.
    """

    op_index: int
    source_key: int
    target_partition: int


@dataclass(slots=True)
class Fragment:
    """Slice of one transaction's operations mapping to a single slot.

    ``ops`` pairs each operation with its index in the transaction, so the
    in-transaction order is preserved; ``dep_reads`` are value reads performed
    on behalf of the transaction's RMW ops executing in other slots. Treated
    as immutable after construction.
    """

    txn_id: TxnId
    partition: int
    subrange: int
    ops: tuple[tuple[int, Operation], ...]
    dep_reads: tuple[DepRead, ...] = ()
    unresolved_deps: int = 0

    def steps(self) -> list[tuple[int, Operation | None, DepRead | None]]:
        """Merged execution order: ops and dep reads sorted by op index."""
        if not self.dep_reads:
            return [(idx, op, None) for idx, op in self.ops]
        merged: list[tuple[int, Operation | None, DepRead | None]] = [
            (idx, op, None) for idx, op in self.ops
        ]
        merged.extend((d.op_index, None, d) for d in self.dep_reads)
        merged.sort(key=lambda item: item[0])
        return merged


@dataclass
class ExecutionQueue:
    """Priority-tagged ordered fragments targeting one (partition, subrange).

    Fragments appear in planning order. Two queues conflict iff they share
    (batch_id, partition, subrange); conflicting queues always carry distinct
    priorities because a planner emits at most one queue per slot per batch.
    """

    batch_id: int
    priority: Priority
    partition: int
    subrange: int
    fragments: list[Fragment] = field(default_factory=list)
    write_only: bool = False

    @property
    def is_remote(self) -> bool:
        """Remote relative to the planning node (node rank == partition rank)."""
        return self.partition != self.priority.node_rank

    def conflicts_with(self, other: "ExecutionQueue") -> bool:
        return (self.batch_id, self.partition, self.subrange) == (
            other.batch_id,
            other.partition,
            other.subrange,
        )


class TxnStatus(enum.Enum):
    PENDING = "PENDING"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


class StatusTransitionError(RuntimeError):
    """A transaction context was driven to a terminal status twice."""


@dataclass
class TransactionContext:
    """Per-transaction progress and abort bookkeeping.

    Mutated concurrently by executor and communication threads; callers
    serialize updates through the owning node's lock. ``read_from`` holds the
    ids of transactions whose speculative writes this transaction observed,
    and ``before_images`` the (key, prior value) pairs for writes executed on
    the owning node.
    """

    txn_id: TxnId
    total_fragments: int
    client_id: int = 0
    completed_fragments: int = 0
    aborted: bool = False
    read_from: set[TxnId] = field(default_factory=set)
    before_images: list[tuple[int, bytes]] = field(default_factory=list)
    status: TxnStatus = TxnStatus.PENDING

    def add_completed(self, count: int = 1) -> None:
        self.completed_fragments += count
        if self.completed_fragments > self.total_fragments:
            raise ValidationError(
                f"{self.txn_id}: completed {self.completed_fragments} exceeds "
                f"total {self.total_fragments}"
            )

    @property
    def all_fragments_done(self) -> bool:
        return self.completed_fragments >= self.total_fragments

    def mark(self, status: TxnStatus) -> None:
        if status is TxnStatus.PENDING:
            raise StatusTransitionError("cannot mark a context PENDING")
        if self.status is not TxnStatus.PENDING:
            raise StatusTransitionError(
                f"{self.txn_id} already terminal ({self.status.value})"
            )
        self.status = status


class PartitionStore:
    """In-memory record store for one partition.

    Values are fixed-length byte strings. Executor threads touch disjoint key
    sets (one claimed queue per slot at a time), so per-key access needs no
    extra locking beyond the interpreter's own guarantees.
    """

    def __init__(self, partition: int, record_size: int = DEFAULT_RECORD_SIZE) -> None:
        self.partition = partition
        self.record_size = record_size
        self._data: dict[int, bytes] = {}

    def populate(self, keys: Iterable[int], init_value) -> None:
        for key in keys:
            self._data[key] = init_value(key)

    def get(self, key: int) -> bytes:
        return self._data[key]

    def put(self, key: int, value: bytes) -> None:
        if len(value) != self.record_size:
            raise ValidationError(
                f"value length {len(value)} != record size {self.record_size}"
            )
        self._data[key] = value

    def __len__(self) -> int:
        return len(self._data)

    def keys(self) -> list[int]:
        return sorted(self._data)

    def items_sorted(self) -> list[tuple[int, bytes]]:
        return sorted(self._data.items())

    def snapshot_bytes(self) -> bytes:
        """Canonical byte image of the partition, for exact-state comparison."""
        parts = []
        for key, value in sorted(self._data.items()):
            parts.append(key.to_bytes(8, "little"))
            parts.append(value)
        return b"".join(parts)


class SlotAlreadyPublished(RuntimeError):
    """Single-assignment violation: a slot received a second queue."""


class SlotPhase(enum.Enum):
    READY = "READY"
    RUNNING = "RUNNING"
    PARKED = "PARKED"
    DONE = "DONE"


@dataclass
class SlotState:
    """Execution bookkeeping for one published queue."""

    eq: ExecutionQueue
    phase: SlotPhase = SlotPhase.READY
    fragment_idx: int = 0
    step_idx: int = 0
    steps: list | None = None
    waiting_on: tuple[TxnId, int] | None = None
    resumable: bool = False
    abort_fired: set[TxnId] = field(default_factory=set)


class SlotKey(NamedTuple):
    priority: Priority
    partition: int
    subrange: int


class BatchMetadata:
    """Per-node view of one batch's distributed grid of queue slots.

    Slots are single-assignment: each (priority, partition, subrange) cell is
    written at most once per batch, which makes plan re-delivery idempotent.
    ``done()`` is true once every expected planner contribution has been
    installed and every published local slot has completed; an empty batch is
    trivially done.
    """

    def __init__(
        self,
        batch_id: int,
        expected_priorities: Iterable[Priority],
        lock: threading.Lock | None = None,
    ) -> None:
        self.batch_id = batch_id
        self.expected_priorities: tuple[Priority, ...] = tuple(
            sorted(expected_priorities)
        )
        self._prio_index = {p: i for i, p in enumerate(self.expected_priorities)}
        self.lock = lock if lock is not None else threading.Lock()
        self.slots: dict[SlotKey, SlotState] = {}
        self.contributions: set[Priority] = set()
        self.contrib_prefix = 0
        self.tc_store: dict[TxnId, TransactionContext] = {}
        self._open = 0
        # Per-subrange publish order, kept sorted by priority for scheduling.
        self.by_subrange: dict[tuple[int, int], list[SlotKey]] = {}

    def _publish_locked(self, eq: ExecutionQueue) -> None:
        key = SlotKey(eq.priority, eq.partition, eq.subrange)
        if key in self.slots:
            raise SlotAlreadyPublished(f"slot {key} already holds a queue")
        self.slots[key] = SlotState(eq=eq)
        self._open += 1
        lane = self.by_subrange.setdefault((eq.partition, eq.subrange), [])
        lane.append(key)
        lane.sort(key=lambda k: k.priority)

    def install_contribution(
        self, priority: Priority, eqs: Iterable[ExecutionQueue]
    ) -> bool:
        """Install one planner's queues for this node; False on duplicate.

        The (possibly empty) delivery also marks the planner's contribution,
        which the scheduler needs to prove no higher-priority queue can still
        arrive for a slot.
        """
        with self.lock:
            if priority in self.contributions:
                return False
            for eq in eqs:
                if eq.priority != priority:
                    raise ValidationError("queue priority does not match delivery")
                self._publish_locked(eq)
            self.contributions.add(priority)
            while (
                self.contrib_prefix < len(self.expected_priorities)
                and self.expected_priorities[self.contrib_prefix] in self.contributions
            ):
                self.contrib_prefix += 1
            return True

    def prefix_covers(self, priority: Priority) -> bool:
        """True iff every expected priority ahead of ``priority`` contributed."""
        return self._prio_index[priority] <= self.contrib_prefix

    def mark_completed_locked(self, key: SlotKey) -> None:
        state = self.slots[key]
        if state.phase is SlotPhase.DONE:
            return
        state.phase = SlotPhase.DONE
        self._open -= 1

    def all_contributed(self) -> bool:
        return len(self.contributions) == len(self.expected_priorities)

    def done(self) -> bool:
        with self.lock:
            return self.done_locked()

    def done_locked(self) -> bool:
        return self.all_contributed() and self._open == 0
