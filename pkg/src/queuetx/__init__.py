"""queuetx: queue-oriented deterministic replicated transaction engine.

A desk-scale implementation of deterministic, speculative, queue-oriented
transaction processing over a partitioned in-memory key-value store, with
quorum or broker replication, write-only-queue durability, a cluster
simulation harness, a YCSB-style workload generator, and a benchmark CLI.
"""

from .core import (
    ExecutionQueue,
    Fragment,
    OpKind,
    Operation,
    PartitionStore,
    Priority,
    Transaction,
    TransactionContext,
    TxnId,
    TxnStatus,
    partition_of,
    priority_less,
    slot_of,
    subrange_of,
)
from .cluster import (
    ClusterConfig,
    ClusterHarness,
    FatalClusterError,
    ReplBackend,
    ReplMode,
    RunResult,
    SyncGranularity,
    TransportKind,
    latency_decompose,
    predict_batch_latency,
)
from .workload import TxnGenerator, WorkloadConfig, ZipfSampler, zipf_sample

__all__ = [
    "ClusterConfig",
    "ClusterHarness",
    "ExecutionQueue",
    "FatalClusterError",
    "Fragment",
    "OpKind",
    "Operation",
    "PartitionStore",
    "Priority",
    "ReplBackend",
    "ReplMode",
    "RunResult",
    "SyncGranularity",
    "Transaction",
    "TransactionContext",
    "TransportKind",
    "TxnGenerator",
    "TxnId",
    "TxnStatus",
    "WorkloadConfig",
    "ZipfSampler",
    "latency_decompose",
    "partition_of",
    "predict_batch_latency",
    "priority_less",
    "slot_of",
    "subrange_of",
    "zipf_sample",
]

__version__ = "0.1.0"
