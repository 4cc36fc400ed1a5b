"""Independent single-threaded oracle for whole-cluster correctness checks.

Replays a workload's transactions serially in transaction-id order with the
same abort rules as the engine, against a plain dict. Deliberately shares no
execution-path code with the engine: slot math is inlined modular arithmetic,
RMW folding and rollback are re-derived here from their definitions.
"""

from __future__ import annotations

from queuetx.core import OpKind, TxnId
from queuetx.workload import ClientTxn


def initial_db(partitions: int, records_per_partition: int, record_size: int) -> dict[int, bytes]:
    return {
        key: bytes([key % 256]) * record_size
        for key in range(partitions * records_per_partition)
    }


def serial_apply(
    db: dict[int, bytes],
    batches: list[list[tuple[TxnId, ClientTxn]]],
    partitions: int,
    subranges: int,
) -> tuple[dict[int, bytes], dict[TxnId, bool]]:
    """Apply batches serially; returns (final db, txn -> committed?).

    Within a batch every transaction executes speculatively in txn-id order;
    logic aborts cascade through read-from edges; aborted writes are undone
    per key by stripping the aborted tail of the key's write chain.
    """
    statuses: dict[TxnId, bool] = {}
    for batch in batches:
        _serial_batch(db, batch, partitions, subranges, statuses)
    return db, statuses


def _slot(key: int, partitions: int, subranges: int) -> tuple[int, int]:
    return (key % partitions, (key // partitions) % subranges)


def _serial_batch(
    db: dict[int, bytes],
    txns: list[tuple[TxnId, ClientTxn]],
    partitions: int,
    subranges: int,
    statuses: dict[TxnId, bool],
) -> None:
    last_writer: dict[int, TxnId] = {}
    write_chains: dict[int, list[tuple[TxnId, bytes]]] = {}
    read_from: dict[TxnId, set[TxnId]] = {}
    logic_aborts: set[TxnId] = set()
    fired_slots: dict[TxnId, set[tuple[int, int]]] = {}

    def record_read(txn: TxnId, key: int) -> None:
        writer = last_writer.get(key)
        if writer is not None and writer != txn:
            read_from.setdefault(txn, set()).add(writer)

    def record_write(txn: TxnId, key: int, value: bytes) -> None:
        write_chains.setdefault(key, []).append((txn, db[key]))
        db[key] = value
        last_writer[key] = txn

    for txn_id, client_txn in sorted(txns, key=lambda t: t[0]):
        fired = fired_slots.setdefault(txn_id, set())
        for idx, op in enumerate(client_txn.operations):
            slot = _slot(op.key, partitions, subranges)
            # Dependency reads on a remote slot run even after an abort fired
            # there; the target-side RMW is what the abort can suppress.
            if op.kind is OpKind.RMW:
                src_slot = _slot(op.dep_source, partitions, subranges)
                if src_slot != slot:
                    record_read(txn_id, op.dep_source)
            if slot in fired:
                continue  # ops after a fired abort in this slot are no-ops
            if op.kind is OpKind.READ:
                record_read(txn_id, op.key)
            elif op.kind is OpKind.UPDATE:
                record_write(txn_id, op.key, op.write_value)
            elif op.kind is OpKind.RMW:
                src_slot = _slot(op.dep_source, partitions, subranges)
                if src_slot == slot:
                    record_read(txn_id, op.dep_source)
                src = db[op.dep_source]
                record_read(txn_id, op.key)
                target = db[op.key]
                record_write(
                    txn_id, op.key, bytes((a + b) & 0xFF for a, b in zip(target, src))
                )
            elif op.kind is OpKind.COND_ABORT:
                record_read(txn_id, op.key)
                if db[op.key][0] < op.abort_threshold:
                    fired.add(slot)
                    logic_aborts.add(txn_id)

    # Cascade: anything that read from a doomed transaction is doomed too.
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

    # Rollback: strip each key's aborted tail; committed overwrites stand.
    for key, chain in write_chains.items():
        i = len(chain)
        while i > 0 and chain[i - 1][0] in doomed:
            i -= 1
        if i < len(chain):
            db[key] = chain[i][1]

    for txn_id, _ in txns:
        statuses[txn_id] = txn_id not in doomed


def db_snapshot_bytes(db: dict[int, bytes], partitions: int = 1) -> bytes:
    """Canonical image in the engine's layout: per-partition sorted keys."""
    parts = []
    for col in range(partitions):
        for key in sorted(k for k in db if k % partitions == col):
            parts.append(key.to_bytes(8, "little"))
            parts.append(db[key])
    return b"".join(parts)
