"""Small-instance property suites runnable from the CLI.

These complement the test suite: each check builds a small randomized
cluster, runs it, and verifies an executable property of the engine
(determinism, replica convergence, ordered execution, exactly-once
execution, commit order among conflicts, and message routing confinement).
"""

from __future__ import annotations

import random

from .cluster import ClusterConfig, ClusterHarness
from .core import OpKind, TxnStatus
from .transport import MsgKind
from .workload import TxnGenerator, WorkloadConfig


def _scenario(rng: random.Random):
    partitions = rng.choice([1, 2, 4])
    planners = rng.choice([1, 2])
    config = ClusterConfig(
        partitions=partitions,
        rf=rng.choice([0, 1]),
        planners=planners,
        executors=rng.choice([1, 2]),
        batch_size=8,
        records_per_partition=32,
        record_size=16,
        plan_timeout_s=5.0,
        capture_traces=True,
        capture_messages=True,
    )
    rmw = rng.choice([0.0, 0.2])
    abort = rng.choice([0.0, 0.15])
    workload = WorkloadConfig(
        mpt_fraction=0.5 if partitions > 1 else 0.0,
        ops_per_txn=rng.randrange(1, 6),
        write_fraction=min(0.5, 1.0 - rmw - abort),
        rmw_fraction=rmw,
        abort_fraction=abort,
        partitions_per_mpt=min(2, partitions),
        records_per_partition=32,
        record_size=16,
        seed=f"check-{rng.randrange(1 << 30)}",
    )
    streams = {}
    for col in range(partitions):
        for thread in range(planners):
            gen = TxnGenerator(workload, partitions, stream_id=f"{col}.{thread}")
            streams[(col, thread)] = [gen.next_txn() for _ in range(24)]
    return config, streams


def _run(config: ClusterConfig, streams) -> ClusterHarness:
    harness = ClusterHarness(config, streams={k: list(v) for k, v in streams.items()})
    harness.run(num_batches=3)
    return harness


def check_determinism(rng: random.Random) -> bool:
    config, streams = _scenario(rng)
    first = _run(config, streams).instance_snapshot(0)
    second = _run(ClusterConfig(**config.__dict__), streams).instance_snapshot(0)
    return first == second


def check_convergence(rng: random.Random) -> bool:
    config, streams = _scenario(rng)
    config.rf = 2
    harness = _run(config, streams)
    leader = harness.instance_snapshot(0)
    return all(harness.instance_snapshot(row) == leader for row in range(1, config.rf + 1))


def check_execution_order(rng: random.Random) -> bool:
    """Conflicting work executes in queue priority order, each op once."""
    config, streams = _scenario(rng)
    harness = _run(config, streams)
    trace = harness.merged_trace(0)
    seen: set = set()
    for entry in trace:
        op_id = (entry.txn_id, entry.op_index)
        if op_id in seen:
            return False
        seen.add(op_id)
    last_pos: dict = {}
    for pos, entry in enumerate(trace):
        slot = (entry.txn_id.batch_id, entry.partition, entry.subrange)
        prev = last_pos.get(slot)
        if prev is not None and entry.priority < prev[0]:
            return False
        if prev is None or entry.priority > prev[0]:
            last_pos[slot] = (entry.priority, pos)
    return True


def check_commit_order(rng: random.Random) -> bool:
    """Committed transactions writing the same key commit in planning order."""
    config, streams = _scenario(rng)
    harness = _run(config, streams)
    commit_tick: dict = {}
    for node in harness.leader_nodes():
        for txn, status, tick, _ in node.commit_log:
            if status is TxnStatus.COMMITTED:
                commit_tick[txn] = tick
    key_touchers: dict = {}
    for node in harness.leader_nodes():
        for nb in node.batches.values():
            for key, chain in nb.runtime.write_log.items():
                for txn, _ in chain:
                    key_touchers.setdefault((nb.bid, key), set()).add(txn)
    for (_, _), txns in key_touchers.items():
        committed = sorted(t for t in txns if t in commit_tick)
        for a, b in zip(committed, committed[1:]):
            if commit_tick[a] >= commit_tick[b]:
                return False
    return True


def check_routing(rng: random.Random) -> bool:
    config, streams = _scenario(rng)
    config.rf = max(config.rf, 1)
    harness = _run(config, streams)
    if not harness.routing_ok():
        return False
    kinds = harness.capture.counts_by_kind()
    return kinds.get(MsgKind.REPL_DATA, 0) > 0


CHECKS = [
    ("determinism", check_determinism),
    ("replica-convergence", check_convergence),
    ("execution-order", check_execution_order),
    ("commit-order", check_commit_order),
    ("message-routing", check_routing),
]


def run_property_checks(seed: str = "check", runs: int = 20) -> bool:
    rng = random.Random(seed)
    all_ok = True
    for name, fn in CHECKS:
        ok = True
        for _ in range(max(1, runs // len(CHECKS))):
            if not fn(rng):
                ok = False
                break
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        all_ok &= ok
    return all_ok
