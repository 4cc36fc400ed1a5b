"""Shared helpers: randomized desk-scale cluster runs and their oracle twin."""

from __future__ import annotations

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from queuetx.cluster import ClusterConfig, ClusterHarness, ReplMode, SyncGranularity
from queuetx.core import TxnId
from queuetx.workload import ClientTxn, TxnGenerator, WorkloadConfig


def make_harness(config: ClusterConfig, workload: WorkloadConfig | None = None, streams=None):
    return ClusterHarness(config, workload=workload, streams=streams)


def random_scenario(rng: random.Random, max_txns: int = 200):
    """One randomized desk-scale configuration plus explicit client streams.

    Streams are pre-generated (not attached as live generators) so the oracle
    sees the exact same transactions with their batch boundaries.
    """
    partitions = rng.choice([1, 2, 4])
    planners = rng.choice([1, 2])
    executors = rng.choice([1, 2, 4])
    # Keyspace capped at 64 records total for tight contention.
    records = max(2, rng.choice([16, 32, 64]) // partitions)
    batch_size = rng.choice([4, 8, 16])
    txns_per_planner = rng.randrange(4, max(5, max_txns // (partitions * planners) + 1))
    config = ClusterConfig(
        partitions=partitions,
        rf=0,
        planners=planners,
        executors=executors,
        batch_size=batch_size,
        records_per_partition=records,
        record_size=16,
        plan_timeout_s=5.0,
        sync_granularity=rng.choice([SyncGranularity.THREAD, SyncGranularity.NODE]),
        repl_mode=ReplMode.SPECULATIVE,
    )
    rmw = rng.choice([0.0, 0.15, 0.3])
    abort = rng.choice([0.0, 0.1, 0.2])
    write = min(rng.choice([0.2, 0.5, 0.8]), 1.0 - rmw - abort)
    workload = WorkloadConfig(
        mpt_fraction=rng.choice([0.0, 0.3, 0.8]),
        zipf_theta=rng.choice([0.0, 0.6, 0.9]),
        ops_per_txn=rng.randrange(1, 8),
        write_fraction=write,
        partitions_per_mpt=min(2, partitions),
        records_per_partition=records,
        rmw_fraction=rmw,
        abort_fraction=abort,
        record_size=16,
        seed=f"scenario-{rng.randrange(1 << 30)}",
    )
    streams = {}
    for col in range(partitions):
        for thread in range(planners):
            gen = TxnGenerator(workload, partitions, stream_id=f"{col}.{thread}")
            streams[(col, thread)] = [gen.next_txn() for _ in range(txns_per_planner)]
    return config, workload, streams


def stream_batches(
    streams: dict[tuple[int, int], list[ClientTxn]], batch_size: int, num_batches: int
) -> list[list[tuple[TxnId, ClientTxn]]]:
    """Batch boundaries and txn ids exactly as the planners assign them."""
    batches: list[list[tuple[TxnId, ClientTxn]]] = [[] for _ in range(num_batches)]
    for (col, thread), txns in streams.items():
        for bid in range(num_batches):
            chunk = txns[bid * batch_size : (bid + 1) * batch_size]
            for seq, client_txn in enumerate(chunk):
                batches[bid].append((TxnId(bid, col, thread, seq), client_txn))
    return batches


def batches_needed(streams: dict, batch_size: int) -> int:
    longest = max((len(t) for t in streams.values()), default=0)
    return max(1, -(-longest // batch_size))
