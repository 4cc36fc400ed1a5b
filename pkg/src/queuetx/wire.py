"""Canonical binary encodings shared by replication, durability, and TCP.

Everything is little-endian with fixed-width integers and length-prefixed
lists, encoded in a fixed field order so that identical inputs always produce
identical bytes. Decoding is strict: malformed input raises DecodeError.
"""

from __future__ import annotations

import struct
import zlib

from .core import (
    DepRead,
    ExecutionQueue,
    Fragment,
    OpKind,
    Operation,
    Priority,
    TransactionContext,
    TxnId,
)

MAGIC = 0x31585451  # b"QTX1" read as little-endian u32
VERSION = 1

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_TXN = struct.Struct("<QIII")
_REPL_HEADER = struct.Struct("<IHQIIBQQ")

FLAG_COMPRESSED = 0x01

REPL_HEADER_LEN = _REPL_HEADER.size


class DecodeError(ValueError):
    """Input bytes do not form a valid encoded structure."""


def checksum(data: bytes) -> int:
    """Body checksum for corruption detection (CRC-32, stored in a u64 slot)."""
    return zlib.crc32(data)


def compress(data: bytes) -> bytes:
    return zlib.compress(data, level=1)


def decompress(data: bytes) -> bytes:
    try:
        return zlib.decompress(data)
    except zlib.error as exc:
        raise DecodeError(f"payload decompression failed: {exc}") from exc


class Reader:
    """Cursor over an immutable byte buffer with strict bounds checks."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0) -> None:
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeError(f"truncated input: wanted {n} bytes at {self.pos}")
        out = self.buf[self.pos : end]
        self.pos = end
        return out

    def u8(self) -> int:
        return _U8.unpack(self.take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def txn_id(self) -> TxnId:
        return TxnId(*_TXN.unpack(self.take(_TXN.size)))

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _put_bytes(out: list[bytes], data: bytes) -> None:
    out.append(_U32.pack(len(data)))
    out.append(data)


def _put_txn(out: list[bytes], txn: TxnId) -> None:
    out.append(_TXN.pack(*txn))


_OP_HEAD = struct.Struct("<BQB")
_FRAG_HEAD = struct.Struct("<IIIII")
_DEP_READ = struct.Struct("<IQI")
_EQ_HEAD = struct.Struct("<QIIIIBI")
_IDX = _U32
_OP_KINDS = tuple(OpKind)  # enum lookup by wire value without Enum.__call__


def encode_op(out: list[bytes], op: Operation) -> None:
    flags = (
        (0x01 if op.write_value is not None else 0)
        | (0x02 if op.dep_source is not None else 0)
        | (0x04 if op.abort_threshold is not None else 0)
    )
    out.append(_OP_HEAD.pack(op.kind, op.key, flags))
    if op.write_value is not None:
        _put_bytes(out, op.write_value)
    if op.dep_source is not None:
        out.append(_U64.pack(op.dep_source))
    if op.abort_threshold is not None:
        out.append(_U8.pack(op.abort_threshold))


def _decode_op(buf: bytes, pos: int) -> tuple[Operation, int]:
    kind_raw, key, flags = _OP_HEAD.unpack_from(buf, pos)
    pos += 10
    write_value = dep_source = abort_threshold = None
    if flags & 0x01:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        write_value = buf[pos : pos + n]
        pos += n
    if flags & 0x02:
        (dep_source,) = _U64.unpack_from(buf, pos)
        pos += 8
    if flags & 0x04:
        abort_threshold = buf[pos]
        pos += 1
    if kind_raw >= len(_OP_KINDS):
        raise DecodeError(f"unknown op kind {kind_raw}")
    return Operation(_OP_KINDS[kind_raw], key, write_value, dep_source, abort_threshold), pos


def decode_op(r: Reader) -> Operation:
    op, pos = _decode_op(r.buf, r.pos)
    r.pos = pos
    return op


def encode_fragment(out: list[bytes], frag: Fragment) -> None:
    _put_txn(out, frag.txn_id)
    out.append(
        _FRAG_HEAD.pack(
            frag.partition,
            frag.subrange,
            frag.unresolved_deps,
            len(frag.ops),
            len(frag.dep_reads),
        )
    )
    for idx, op in frag.ops:
        out.append(_IDX.pack(idx))
        encode_op(out, op)
    for dep in frag.dep_reads:
        out.append(_DEP_READ.pack(dep.op_index, dep.source_key, dep.target_partition))


def _decode_fragment(buf: bytes, pos: int) -> tuple[Fragment, int]:
    txn = TxnId(*_TXN.unpack_from(buf, pos))
    pos += _TXN.size
    partition, subrange, unresolved, n_ops, n_deps = _FRAG_HEAD.unpack_from(buf, pos)
    pos += 20
    ops = []
    for _ in range(n_ops):
        (idx,) = _IDX.unpack_from(buf, pos)
        op, pos = _decode_op(buf, pos + 4)
        ops.append((idx, op))
    deps = []
    for _ in range(n_deps):
        deps.append(DepRead(*_DEP_READ.unpack_from(buf, pos)))
        pos += 16
    return Fragment(txn, partition, subrange, tuple(ops), tuple(deps), unresolved), pos


def decode_fragment(r: Reader) -> Fragment:
    frag, pos = _decode_fragment(r.buf, r.pos)
    r.pos = pos
    return frag


def encode_eq(out: list[bytes], eq: ExecutionQueue) -> None:
    out.append(
        _EQ_HEAD.pack(
            eq.batch_id,
            eq.priority.node_rank,
            eq.priority.thread_rank,
            eq.partition,
            eq.subrange,
            1 if eq.write_only else 0,
            len(eq.fragments),
        )
    )
    for frag in eq.fragments:
        encode_fragment(out, frag)


def _decode_eq(buf: bytes, pos: int) -> tuple[ExecutionQueue, int]:
    batch_id, node, thread, partition, subrange, wo, n_frags = _EQ_HEAD.unpack_from(buf, pos)
    pos += 29
    frags = []
    for _ in range(n_frags):
        frag, pos = _decode_fragment(buf, pos)
        frags.append(frag)
    eq = ExecutionQueue(
        batch_id=batch_id,
        priority=Priority(node, thread),
        partition=partition,
        subrange=subrange,
        fragments=frags,
        write_only=bool(wo),
    )
    return eq, pos


def decode_eq(r: Reader) -> ExecutionQueue:
    eq, pos = _decode_eq(r.buf, r.pos)
    r.pos = pos
    return eq


def serialize_plan(
    eqs: list[ExecutionQueue], tcs: dict[TxnId, TransactionContext]
) -> bytes:
    """Canonical plan payload: the planner's queues plus its context shard."""
    out: list[bytes] = [_U32.pack(len(eqs))]
    for eq in sorted(eqs, key=lambda q: (q.partition, q.subrange)):
        encode_eq(out, eq)
    out.append(_U32.pack(len(tcs)))
    for txn in sorted(tcs):
        tc = tcs[txn]
        _put_txn(out, txn)
        out.append(struct.pack("<IQ", tc.total_fragments, tc.client_id))
    return b"".join(out)


_TC_TAIL = struct.Struct("<IQ")


def deserialize_plan(
    body: bytes,
) -> tuple[list[ExecutionQueue], dict[TxnId, TransactionContext]]:
    try:
        (n_eqs,) = _U32.unpack_from(body, 0)
        pos = 4
        eqs = []
        for _ in range(n_eqs):
            eq, pos = _decode_eq(body, pos)
            eqs.append(eq)
        (n_tcs,) = _U32.unpack_from(body, pos)
        pos += 4
        tcs: dict[TxnId, TransactionContext] = {}
        for _ in range(n_tcs):
            txn = TxnId(*_TXN.unpack_from(body, pos))
            pos += _TXN.size
            total, client = _TC_TAIL.unpack_from(body, pos)
            pos += 12
            tcs[txn] = TransactionContext(txn_id=txn, total_fragments=total, client_id=client)
    except struct.error as exc:
        raise DecodeError(f"truncated plan payload: {exc}") from exc
    if pos != len(body):
        raise DecodeError(f"{len(body) - pos} trailing bytes after plan payload")
    return eqs, tcs


def encode_repl_frame(
    batch_id: int,
    priority: Priority,
    body: bytes,
    compressed: bool,
) -> bytes:
    """REPL_DATA wire form: fixed little-endian header followed by the body."""
    flags = FLAG_COMPRESSED if compressed else 0
    header = _REPL_HEADER.pack(
        MAGIC,
        VERSION,
        batch_id,
        priority.node_rank,
        priority.thread_rank,
        flags,
        len(body),
        checksum(body),
    )
    return header + body


def decode_repl_frame(frame: bytes) -> tuple[int, Priority, bool, int, bytes]:
    """Returns (batch_id, priority, compressed, checksum, body).

    The checksum is returned rather than verified here so the replication
    layer can treat a mismatch as a recoverable re-request, not a decode bug.
    """
    if len(frame) < REPL_HEADER_LEN:
        raise DecodeError("replication frame shorter than its header")
    magic, version, batch_id, node, thread, flags, body_len, check = _REPL_HEADER.unpack(
        frame[:REPL_HEADER_LEN]
    )
    if magic != MAGIC:
        raise DecodeError(f"bad replication magic {magic:#x}")
    if version != VERSION:
        raise DecodeError(f"unsupported replication version {version}")
    body = frame[REPL_HEADER_LEN:]
    if len(body) != body_len:
        raise DecodeError(f"body length {len(body)} does not match header {body_len}")
    return batch_id, Priority(node, thread), bool(flags & FLAG_COMPRESSED), check, body


def encode_write_only_eq(
    batch_id: int, partition: int, subrange: int, entries: list[tuple[int, bytes]]
) -> bytes:
    out: list[bytes] = [struct.pack("<QIII", batch_id, partition, subrange, len(entries))]
    for key, value in entries:
        out.append(_U64.pack(key))
        _put_bytes(out, value)
    return b"".join(out)


def decode_write_only_eq(r: Reader) -> tuple[int, int, int, list[tuple[int, bytes]]]:
    batch_id, partition, subrange, count = struct.unpack("<QIII", r.take(20))
    entries = [(r.u64(), r.bytes_()) for _ in range(count)]
    return batch_id, partition, subrange, entries
