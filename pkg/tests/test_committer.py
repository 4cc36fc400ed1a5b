"""Commitment: closure, rollback resolution, the pending queue, ordering."""

import pytest

from queuetx.committer import (
    BatchCommitter,
    cascade_closure,
    commit_txn,
    committed_written_keys,
    resolve_rollbacks,
)
from queuetx.core import StatusTransitionError, TransactionContext, TxnId, TxnStatus


T1 = TxnId(0, 0, 0, 0)
T2 = TxnId(0, 0, 0, 1)
T3 = TxnId(0, 0, 0, 2)


def _closure_oracle(sources, edges):
    """Independent fixpoint: iterate until no new doomed transaction."""
    doomed = set(sources)
    changed = True
    while changed:
        changed = False
        for reader, writers in edges.items():
            if reader not in doomed and writers & doomed:
                doomed.add(reader)
                changed = True
    return doomed


class TestCascadeClosure:
    def test_chain(self):
        edges = {T2: {T1}, T3: {T2}}
        assert cascade_closure({T1}, edges) == {T1, T2, T3}
        assert cascade_closure({T1}, edges) == _closure_oracle({T1}, edges)

    def test_no_sources(self):
        assert cascade_closure(set(), {T2: {T1}}) == set()

    def test_committed_writer_no_cascade(self):
        assert cascade_closure(set(), {T2: {T1}}) == set()
        assert cascade_closure({T3}, {T2: {T1}}) == {T3}

    def test_matches_oracle_on_random_graphs(self):
        import random

        rng = random.Random("closure")
        for _ in range(50):
            txns = [TxnId(0, 0, 0, i) for i in range(12)]
            edges = {}
            for reader in txns:
                writers = {
                    w for w in txns if w < reader and rng.random() < 0.25
                }
                if writers:
                    edges[reader] = writers
            sources = {t for t in txns if rng.random() < 0.2}
            assert cascade_closure(sources, edges) == _closure_oracle(sources, edges)


class TestRollbackResolution:
    def test_aborted_tail_restores_prior_value(self):
        log = {5: [(T1, b"A"), (T2, b"B")]}
        assert resolve_rollbacks(log, {T2}) == {5: b"B"}

    def test_full_abort_restores_pre_batch_value(self):
        log = {5: [(T1, b"A"), (T2, b"B")]}
        assert resolve_rollbacks(log, {T1, T2}) == {5: b"A"}

    def test_committed_blind_overwrite_stands(self):
        # T1 aborted but T2 blindly overwrote the key and committed: the
        # final value is T2's write, so no restoration happens at all.
        log = {5: [(T1, b"A"), (T2, b"B")]}
        assert resolve_rollbacks(log, {T1}) == {}

    def test_aborted_middle_between_commits(self):
        log = {5: [(T1, b"A"), (T2, b"B"), (T3, b"C")]}
        assert resolve_rollbacks(log, {T2}) == {}
        assert resolve_rollbacks(log, {T2, T3}) == {5: b"B"}

    def test_committed_written_keys_excludes_abort_only(self):
        log = {1: [(T1, b"A")], 2: [(T2, b"B")], 3: [(T1, b"X"), (T2, b"Y")]}
        assert committed_written_keys(log, {T1}) == [2, 3]
        assert committed_written_keys(log, {T1, T2}) == []


def tc(txn, total=1, completed=None, aborted=False):
    t = TransactionContext(txn, total_fragments=total)
    t.completed_fragments = completed if completed is not None else total
    t.aborted = aborted
    return t


class TestCommitTxn:
    def test_incomplete_returns_false(self):
        assert commit_txn(tc(T1, total=2, completed=1), set(), set(), {}) is False

    def test_complete_commits(self):
        t = tc(T1)
        assert commit_txn(t, set(), set(), {}) is True
        assert t.status is TxnStatus.COMMITTED

    def test_abort_is_terminal_true(self):
        t = tc(T2)
        board = {}
        assert commit_txn(t, {T2}, set(), board) is True
        assert t.status is TxnStatus.ABORTED
        assert board[T2] is TxnStatus.ABORTED

    def test_cascaded_abort_via_closure_set(self):
        t = tc(T2)
        assert commit_txn(t, {T1, T2}, set(), {}) is True
        assert t.status is TxnStatus.ABORTED

    def test_gated_on_predecessors(self):
        t = tc(T2)
        board = {}
        assert commit_txn(t, set(), {T1}, board) is False
        board[T1] = TxnStatus.COMMITTED
        assert commit_txn(t, set(), {T1}, board) is True


class TestBatchCommitter:
    def _run(self, tcs, abort_set=None, preds=None, board=None, release=None):
        order = []
        board = board if board is not None else {}
        waits = {"n": 0}

        def wait_progress():
            waits["n"] += 1
            if release and waits["n"] in release:
                board.update(release[waits["n"]])
            if waits["n"] > 50:
                raise TimeoutError("commit made no progress")

        committer = BatchCommitter(
            txns_in_order=sorted(tcs),
            tcs=tcs,
            abort_set=abort_set or set(),
            preds=preds or {},
            board=board,
            on_terminal=lambda t, status, tick: order.append((t.txn_id, status)),
            wait_progress=wait_progress,
        )
        report = committer.run()
        return report, order

    def test_non_conflicting_all_commit_without_pending(self):
        tcs = {T1: tc(T1), T2: tc(T2)}
        report, order = self._run(tcs)
        assert report.committed == 2 and report.aborted == 0
        assert [t for t, _ in order] == [T1, T2]

    def test_pending_head_blocks_until_terminal(self):
        # T1 waits on an external predecessor; T2 conflicts with T1 so it is
        # gated too; both drain once the predecessor goes terminal.
        ext = TxnId(0, 9, 9, 9)
        tcs = {T1: tc(T1), T2: tc(T2)}
        preds = {T1: {ext}, T2: {T1}}
        report, order = self._run(
            tcs, preds=preds, release={2: {ext: TxnStatus.COMMITTED}}
        )
        assert [t for t, _ in order] == [T1, T2]
        assert report.committed == 2

    def test_abort_drains_past_pending_queue(self):
        tcs = {T1: tc(T1), T2: tc(T2)}
        report, order = self._run(tcs, abort_set={T1})
        assert report.aborted == 1 and report.committed == 1
        assert order[0] == (T1, TxnStatus.ABORTED)

    def test_commit_order_follows_planning_order_among_conflicts(self):
        tcs = {T1: tc(T1), T2: tc(T2), T3: tc(T3)}
        preds = {T2: {T1}, T3: {T2}}
        report, order = self._run(tcs, preds=preds)
        assert [t for t, _ in order] == [T1, T2, T3]
        seqs = [r.seq for r in report.records]
        assert seqs == sorted(seqs)

    def test_exactly_once_terminal(self):
        tcs = {T1: tc(T1)}
        _, order = self._run(tcs)
        committer_again = tcs[T1]
        with pytest.raises(StatusTransitionError):
            committer_again.mark(TxnStatus.ABORTED)
