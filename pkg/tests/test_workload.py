"""Workload generation: mix fractions, skew correctness, determinism."""

import math
import random
from collections import Counter

import pytest

from queuetx.core import OpKind, ValidationError, partition_of
from queuetx.workload import TxnGenerator, WorkloadConfig, ZipfSampler, zipf_sample


def config(**kwargs):
    base = dict(
        mpt_fraction=0.0,
        zipf_theta=0.0,
        ops_per_txn=4,
        write_fraction=0.5,
        partitions_per_mpt=1,
        records_per_partition=64,
        record_size=8,
        seed="wl",
    )
    base.update(kwargs)
    return WorkloadConfig(**base)


class TestConfigValidation:
    def test_fraction_bounds(self):
        with pytest.raises(ValidationError):
            config(mpt_fraction=1.5).validate(2)
        with pytest.raises(ValidationError):
            config(write_fraction=0.8, rmw_fraction=0.3).validate(2)
        with pytest.raises(ValidationError):
            config(zipf_theta=1.0).validate(2)
        with pytest.raises(ValidationError):
            config(partitions_per_mpt=4).validate(2)
        config().validate(2)


class TestZipf:
    def test_support_of_one(self):
        rng = random.Random(1)
        assert all(zipf_sample(0.5, 1, rng) == 0 for _ in range(10))

    def test_uniform_limit(self):
        sampler = ZipfSampler(0.0, 4)
        rng = random.Random("uniform")
        counts = Counter(sampler.sample(rng) for _ in range(100_000))
        for rank in range(4):
            assert abs(counts[rank] / 100_000 - 0.25) < 0.005

    def test_pmf_sums_to_one(self):
        sampler = ZipfSampler(0.99, 1000)
        assert math.isclose(sum(sampler.pmf(r) for r in range(1000)), 1.0, rel_tol=1e-9)

    def test_skew_against_inverse_cdf_oracle(self):
        """Top rank dominates rank 100 by an order of magnitude at high skew,
        matching a direct inverse-CDF draw over the exact mass function."""
        n, theta, samples = 1000, 0.99, 200_000
        sampler = ZipfSampler(theta, n)
        rng = random.Random("skew")
        counts = Counter(sampler.sample(rng) for _ in range(samples))
        assert counts[0] > 10 * max(1, counts[100])

        # Independent oracle: cumulative mass walked by hand per draw.
        weights = [1.0 / (r + 1) ** theta for r in range(n)]
        total = sum(weights)
        oracle_rng = random.Random("skew-oracle")
        oracle_counts = Counter()
        for _ in range(20_000):
            u = oracle_rng.random() * total
            acc = 0.0
            for rank, w in enumerate(weights):
                acc += w
                if u <= acc:
                    oracle_counts[rank] += 1
                    break
        assert oracle_counts[0] > 10 * max(1, oracle_counts[100])
        # Both observed top-rank frequencies match the exact pmf closely.
        assert abs(counts[0] / samples - sampler.pmf(0)) < 0.01
        assert abs(oracle_counts[0] / 20_000 - sampler.pmf(0)) < 0.02


class TestGenerateTxn:
    def test_single_partition_txn_shape(self):
        gen = TxnGenerator(config(ops_per_txn=16), partitions=4, stream_id="s")
        txn = gen.next_txn()
        assert len(txn.operations) == 16
        partitions = {partition_of(op.key, 4) for op in txn.operations}
        assert len(partitions) == 1

    def test_mpt_spans_exactly_configured_partitions(self):
        gen = TxnGenerator(
            config(mpt_fraction=1.0, partitions_per_mpt=8, ops_per_txn=16,
                   records_per_partition=64),
            partitions=16,
            stream_id="s",
        )
        for _ in range(50):
            txn = gen.next_txn()
            partitions = {partition_of(op.key, 16) for op in txn.operations}
            assert len(partitions) == 8

    def test_measured_mpt_fraction_close(self):
        gen = TxnGenerator(
            config(mpt_fraction=0.5, partitions_per_mpt=2), partitions=4, stream_id="s"
        )
        n = 20_000
        mpts = 0
        for _ in range(n):
            txn = gen.next_txn()
            if len({partition_of(op.key, 4) for op in txn.operations}) > 1:
                mpts += 1
        assert abs(mpts / n - 0.5) < 0.01

    def test_write_fraction_approximate(self):
        gen = TxnGenerator(config(write_fraction=0.5, ops_per_txn=16), 1, "s")
        ops = [op for _ in range(2000) for op in gen.next_txn().operations]
        writes = sum(1 for op in ops if op.kind is OpKind.UPDATE)
        assert abs(writes / len(ops) - 0.5) < 0.02

    def test_kind_payloads_present(self):
        gen = TxnGenerator(
            config(write_fraction=0.3, rmw_fraction=0.3, abort_fraction=0.3),
            partitions=2,
            stream_id="s",
        )
        kinds = set()
        for _ in range(300):
            for op in gen.next_txn().operations:
                kinds.add(op.kind)
                if op.kind is OpKind.UPDATE:
                    assert len(op.write_value) == 8
                elif op.kind is OpKind.RMW:
                    assert op.dep_source is not None
                elif op.kind is OpKind.COND_ABORT:
                    assert op.abort_threshold >= 1
        assert kinds == set(OpKind)

    def test_fixed_seed_reproduces_stream(self):
        a = TxnGenerator(config(mpt_fraction=0.4, partitions_per_mpt=2), 4, "0.0")
        b = TxnGenerator(config(mpt_fraction=0.4, partitions_per_mpt=2), 4, "0.0")
        for _ in range(200):
            ta, tb = a.next_txn(), b.next_txn()
            assert ta.operations == tb.operations

    def test_skip_replays_identically(self):
        ahead = TxnGenerator(config(), 2, "0.0")
        for _ in range(37):
            ahead.next_txn()
        replay = TxnGenerator(config(), 2, "0.0")
        replay.skip(37)
        for _ in range(10):
            assert ahead.next_txn().operations == replay.next_txn().operations

    def test_streams_are_independent(self):
        a = TxnGenerator(config(), 2, "0.0")
        b = TxnGenerator(config(), 2, "0.1")
        assert any(
            a.next_txn().operations != b.next_txn().operations for _ in range(20)
        )


class TestChiSquareSmall:
    def test_generated_ranks_match_exact_pmf(self):
        """Chi-square goodness of fit at moderate sample size; the acceptance
        suite runs the full 10^6-sample version at three skews."""
        from scipy import stats

        n, theta, samples = 200, 0.6, 200_000
        sampler = ZipfSampler(theta, n)
        rng = random.Random("chi-small")
        counts = Counter(sampler.sample(rng) for _ in range(samples))
        observed = [counts[r] for r in range(n)]
        expected = [sampler.pmf(r) * samples for r in range(n)]
        _, p = stats.chisquare(observed, expected)
        assert p > 0.01
