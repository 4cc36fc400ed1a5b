"""YCSB-style transactional workload generation.

Transactions are synthesized deterministically from a seed: a fraction are
multi-partition, keys are drawn Zipfian within the chosen partition(s), and
operation kinds follow configured fractions. Every stream is reproducible
given (seed, stream id), which the determinism and recovery tests rely on.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass, field

from .core import DEFAULT_RECORD_SIZE, OpKind, Operation, ValidationError


@dataclass(frozen=True)
class WorkloadConfig:
    mpt_fraction: float = 0.5
    zipf_theta: float = 0.0
    ops_per_txn: int = 16
    write_fraction: float = 0.5
    partitions_per_mpt: int = 2
    records_per_partition: int = 10_000
    rmw_fraction: float = 0.0
    abort_fraction: float = 0.0
    record_size: int = DEFAULT_RECORD_SIZE
    seed: str = "0"

    def validate(self, partitions: int) -> None:
        for name in ("mpt_fraction", "write_fraction", "rmw_fraction", "abort_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if self.write_fraction + self.rmw_fraction + self.abort_fraction > 1.0 + 1e-9:
            raise ValidationError("operation kind fractions exceed 1.0")
        if self.ops_per_txn < 1:
            raise ValidationError("ops_per_txn must be >= 1")
        if self.partitions_per_mpt > partitions:
            raise ValidationError(
                f"partitions_per_mpt {self.partitions_per_mpt} exceeds partition count {partitions}"
            )
        if not 0.0 <= self.zipf_theta < 1.0:
            raise ValidationError("zipf_theta must be in [0, 1)")
        if self.records_per_partition < 1:
            raise ValidationError("records_per_partition must be >= 1")


class ZipfSampler:
    """Exact Zipfian sampling over ranks [0, n) by inverse CDF.

    Rank k is drawn with probability (1/(k+1)^theta) / zeta(n, theta); the
    cumulative mass table is precomputed once so each sample costs one uniform
    draw plus a bisect. theta = 0 reduces to the uniform distribution.
    """

    def __init__(self, theta: float, n: int) -> None:
        if n < 1:
            raise ValidationError("zipf support size must be >= 1")
        if not 0.0 <= theta < 1.0:
            raise ValidationError("zipf theta must be in [0, 1)")
        self.theta = theta
        self.n = n
        cum: list[float] = []
        total = 0.0
        for rank in range(n):
            total += 1.0 / (rank + 1) ** theta
            cum.append(total)
        self.zeta = total
        self._cum = cum

    def pmf(self, rank: int) -> float:
        return (1.0 / (rank + 1) ** self.theta) / self.zeta

    def sample(self, rng: random.Random) -> int:
        if self.n == 1:
            return 0
        return bisect.bisect_right(self._cum, rng.random() * self.zeta)


def zipf_sample(theta: float, n: int, rng: random.Random) -> int:
    """One-shot Zipfian draw; prefer a reused ZipfSampler in hot paths."""
    return ZipfSampler(theta, n).sample(rng)


def initial_value(key: int, record_size: int = DEFAULT_RECORD_SIZE) -> bytes:
    """Deterministic initial record value; first byte varies with the key."""
    return bytes([key % 256]) * record_size


@dataclass
class ClientTxn:
    """A client request before planning assigns it a transaction id."""

    client_id: int
    operations: tuple[Operation, ...]
    arrival_tick: int = 0


class TxnGenerator:
    """Deterministic per-client-stream transaction source.

    One generator feeds one planner's client transaction queue; independent
    streams derive their RNG from (seed, stream id) so replaying a prefix
    after a failover reproduces the exact same transactions.
    """

    def __init__(
        self,
        config: WorkloadConfig,
        partitions: int,
        stream_id: str,
        client_id: int = 0,
    ) -> None:
        config.validate(partitions)
        self.config = config
        self.partitions = partitions
        self.stream_id = stream_id
        self.client_id = client_id
        self.generated = 0
        # String seeding hashes the bytes, so streams are stable across
        # processes regardless of PYTHONHASHSEED.
        self._rng = random.Random(f"{config.seed}/{stream_id}")
        self._zipf = ZipfSampler(config.zipf_theta, config.records_per_partition)

    def skip(self, count: int) -> None:
        """Advance past ``count`` transactions (failover stream replay)."""
        for _ in range(count):
            self.next_txn()

    def next_txn(self) -> ClientTxn:
        cfg = self.config
        rng = self._rng
        want_mpt = self.partitions > 1 and rng.random() < cfg.mpt_fraction
        if want_mpt:
            span = min(cfg.partitions_per_mpt, self.partitions, cfg.ops_per_txn)
            span = max(span, 1)
            parts = rng.sample(range(self.partitions), span)
        else:
            parts = [rng.randrange(self.partitions)]

        ops: list[Operation] = []
        for i in range(cfg.ops_per_txn):
            part = parts[i % len(parts)]
            key = part + self.partitions * self._zipf.sample(rng)
            roll = rng.random()
            if roll < cfg.write_fraction:
                ops.append(
                    Operation(
                        OpKind.UPDATE, key, write_value=rng.randbytes(cfg.record_size)
                    )
                )
            elif roll < cfg.write_fraction + cfg.rmw_fraction:
                src_part = parts[(i + 1) % len(parts)]
                src_key = src_part + self.partitions * self._zipf.sample(rng)
                ops.append(Operation(OpKind.RMW, key, dep_source=src_key))
            elif roll < cfg.write_fraction + cfg.rmw_fraction + cfg.abort_fraction:
                ops.append(
                    Operation(OpKind.COND_ABORT, key, abort_threshold=rng.randrange(1, 96))
                )
            else:
                ops.append(Operation(OpKind.READ, key))
        self.generated += 1
        return ClientTxn(client_id=self.client_id, operations=tuple(ops))
