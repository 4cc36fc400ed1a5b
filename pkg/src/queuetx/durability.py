"""Durability: write-only queues, append-only logging, checkpoints, failover.

Instead of logging transaction inputs (which would have to be re-planned and
re-coordinated on recovery), each batch's effect on a partition is reduced to
write-only queues holding every written key's final committed value. Replaying
them over a checkpoint is idempotent, needs no dependency resolution, and
reproduces the live state byte-for-byte.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from . import wire
from .committer import committed_written_keys
from .core import PartitionStore, TxnId, subrange_of


class RecoveryError(RuntimeError):
    pass


class GroupUnavailableError(RuntimeError):
    pass


@dataclass(frozen=True)
class WriteOnlyEQ:
    """Final committed value per written key for one batch and slot."""

    batch_id: int
    partition: int
    subrange: int
    entries: tuple[tuple[int, bytes], ...]

    def to_bytes(self) -> bytes:
        return wire.encode_write_only_eq(
            self.batch_id, self.partition, self.subrange, list(self.entries)
        )

    @staticmethod
    def from_reader(r: wire.Reader) -> "WriteOnlyEQ":
        batch_id, partition, subrange, entries = wire.decode_write_only_eq(r)
        return WriteOnlyEQ(batch_id, partition, subrange, tuple(entries))


def build_write_only_eq(
    write_log: dict[int, list[tuple[TxnId, bytes]]],
    abort_set: set[TxnId],
    store: PartitionStore,
    batch_id: int,
    partition: int,
    subrange: int,
    partitions: int,
    subranges: int,
) -> WriteOnlyEQ:
    """Reduce one slot's batch commit results to last committed writes.

    Must run after rollback, so the store already holds post-commit values;
    keys written only by aborted transactions are excluded.
    """
    entries = tuple(
        (key, store.get(key))
        for key in committed_written_keys(write_log, abort_set)
        if subrange_of(key, partitions, subranges) == subrange
    )
    return WriteOnlyEQ(batch_id, partition, subrange, entries)


def build_batch_write_set(
    write_log: dict[int, list[tuple[TxnId, bytes]]],
    abort_set: set[TxnId],
    store: PartitionStore,
    batch_id: int,
    partition: int,
    partitions: int,
    subranges: int,
) -> list[WriteOnlyEQ]:
    """All non-empty write-only queues a batch produced on one partition."""
    by_subrange: dict[int, list[tuple[int, bytes]]] = {}
    for key in committed_written_keys(write_log, abort_set):
        by_subrange.setdefault(subrange_of(key, partitions, subranges), []).append(
            (key, store.get(key))
        )
    return [
        WriteOnlyEQ(batch_id, partition, sub, tuple(entries))
        for sub, entries in sorted(by_subrange.items())
    ]


@dataclass
class LogRecord:
    batch_id: int
    queues: tuple[WriteOnlyEQ, ...]


class DurabilityLog:
    """Append-only per-node log of write-only queues, one record per batch.

    Every batch appends a record, even a write-free one, so a missing epoch
    in the sequence is always detectable. Appends are serialized per node;
    the file sink is optional (tests run in memory, fsync policy is the
    caller's concern at desk scale).
    """

    def __init__(self, path=None) -> None:
        self.records: list[LogRecord] = []
        self._lock = threading.Lock()
        self._path = path
        self._fh = open(path, "ab") if path is not None else None

    @property
    def watermark(self) -> int:
        with self._lock:
            return self.records[-1].batch_id if self.records else -1

    def append_batch(self, batch_id: int, queues: list[WriteOnlyEQ]) -> None:
        record = LogRecord(batch_id, tuple(queues))
        with self._lock:
            expected = self.records[-1].batch_id + 1 if self.records else batch_id
            if self.records and batch_id != expected:
                raise RecoveryError(
                    f"log append out of order: got batch {batch_id}, expected {expected}"
                )
            self.records.append(record)
            if self._fh is not None:
                payload = self._encode_record(record)
                self._fh.write(len(payload).to_bytes(4, "little"))
                self._fh.write(payload)
                self._fh.flush()

    @staticmethod
    def _encode_record(record: LogRecord) -> bytes:
        parts = [record.batch_id.to_bytes(8, "little")]
        parts.append(len(record.queues).to_bytes(4, "little"))
        for queue in record.queues:
            parts.append(queue.to_bytes())
        return b"".join(parts)

    @staticmethod
    def _decode_record(payload: bytes) -> LogRecord:
        r = wire.Reader(payload)
        batch_id = r.u64()
        count = r.u32()
        queues = tuple(WriteOnlyEQ.from_reader(r) for _ in range(count))
        return LogRecord(batch_id, queues)

    @classmethod
    def load(cls, path) -> "DurabilityLog":
        log = cls()
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            if pos + 4 > len(data):
                raise RecoveryError("truncated log file")
            length = int.from_bytes(data[pos : pos + 4], "little")
            pos += 4
            if pos + length > len(data):
                raise RecoveryError("truncated log record")
            log.records.append(cls._decode_record(data[pos : pos + length]))
            pos += length
        return log

    def slice(self, from_batch: int, to_batch: int) -> list[LogRecord]:
        """Records for batches in [from_batch, to_batch], for peer catch-up."""
        with self._lock:
            return [r for r in self.records if from_batch <= r.batch_id <= to_batch]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


CHECKPOINT_MAGIC = 0x30505851  # b"QXP0"


@dataclass
class Checkpoint:
    """Batch watermark plus a full raw snapshot of one partition."""

    watermark: int
    partition: int
    partitions: int
    subranges: int
    record_size: int
    records: tuple[tuple[int, bytes], ...]

    def to_bytes(self) -> bytes:
        # Watermark is stored +1 so the fresh-store case (-1) stays unsigned.
        parts = [
            CHECKPOINT_MAGIC.to_bytes(4, "little"),
            (self.watermark + 1).to_bytes(8, "little"),
            self.partition.to_bytes(4, "little"),
            self.partitions.to_bytes(4, "little"),
            self.subranges.to_bytes(4, "little"),
            self.record_size.to_bytes(4, "little"),
            len(self.records).to_bytes(8, "little"),
        ]
        for key, value in self.records:
            parts.append(key.to_bytes(8, "little"))
            parts.append(value)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        r = wire.Reader(data)
        if r.u32() != CHECKPOINT_MAGIC:
            raise RecoveryError("bad checkpoint magic")
        watermark = r.u64() - 1
        partition = r.u32()
        partitions = r.u32()
        subranges = r.u32()
        record_size = r.u32()
        count = r.u64()
        records = tuple((r.u64(), r.take(record_size)) for _ in range(count))
        return cls(watermark, partition, partitions, subranges, record_size, records)


def take_checkpoint(
    store: PartitionStore,
    watermark: int,
    partition: int,
    partitions: int,
    subranges: int,
) -> Checkpoint:
    return Checkpoint(
        watermark=watermark,
        partition=partition,
        partitions=partitions,
        subranges=subranges,
        record_size=store.record_size,
        records=tuple(store.items_sorted()),
    )


def recover_node(
    log_records: list[LogRecord], checkpoint: Checkpoint
) -> PartitionStore:
    """Snapshot plus ordered replay of write-only queues.

    Replays every logged batch above the checkpoint watermark in ascending
    batch order (slots in ascending subrange within a batch). Replay is pure
    overwrites, hence idempotent. A missing epoch raises naming the gap.
    """
    store = PartitionStore(checkpoint.partition, checkpoint.record_size)
    for key, value in checkpoint.records:
        store.put(key, value)
    relevant = sorted(
        (r for r in log_records if r.batch_id > checkpoint.watermark),
        key=lambda r: r.batch_id,
    )
    expected = checkpoint.watermark + 1
    for record in relevant:
        if record.batch_id != expected:
            raise RecoveryError(f"log gap: missing batch {expected}")
        expected += 1
        for queue in sorted(record.queues, key=lambda q: (q.partition, q.subrange)):
            for key, value in queue.entries:
                store.put(key, value)
    return store


def elect_leader(candidates: dict[int, int]) -> int:
    """Deterministic leader choice for a replication group.

    ``candidates`` maps surviving follower node rank (row) to its last
    committed batch id. The highest watermark wins; ties break toward the
    lowest rank. The caller is responsible for catching the winner up on any
    batches its peers committed beyond its own watermark.
    """
    if not candidates:
        raise GroupUnavailableError("no surviving members in replication group")
    return min(candidates, key=lambda rank: (-candidates[rank], rank))
