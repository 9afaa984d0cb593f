import hashlib
import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsearch.child import ChildConfig, RewardRecord, activation_name, make_dataset
from actsearch.exhaustive import Leaderboard
from actsearch.scheduler import (
    CACHED_WORKER,
    EvalScheduler,
    EvalTask,
    RewardCache,
    cache_key,
)

CFG = ChildConfig(hidden_widths=(4,), steps=1)
EXPRS = [
    "max(id(x), const)", "sigmoid_gate(scale_param(x), id(x))", "add(id(x), const)",
    "mul(tanh(x), id(x))", "min(id(x), const)", "sub(sin(x), id(x))", "add(cos(x), id(x))",
    "max(sigmoid(x), id(x))",
]


@pytest.fixture(scope="module")
def ds():
    return make_dataset("two_spirals", 40, 0)


class FakeTrainer:
    """Deterministic pseudo-reward from (expr, seed); counts calls."""

    def __init__(self, fail_times=0):
        self.calls = []
        self.lock = threading.Lock()
        self.fail_times = fail_times

    def __call__(self, expr, dataset, cfg):
        name = activation_name(expr)
        with self.lock:
            self.calls.append((name, cfg.seed))
            if self.fail_times:
                self.fail_times -= 1
                raise RuntimeError("boom")
        digest = hashlib.sha256(f"{name}|{cfg.seed}".encode()).digest()
        acc = digest[0] / 255
        return RewardRecord(name, acc, 1.0 - acc, False, 5, cfg.seed)


def tasks(exprs, start=0, seed=0):
    return [EvalTask(start + i, e, CFG, seed) for i, e in enumerate(exprs)]


def test_batch_exactly_once(ds):
    trainer = FakeTrainer()
    with EvalScheduler(ds, workers=4, train_fn=trainer) as sched:
        batch = tasks((EXPRS * 2)[:16], seed=0)
        # make all 16 distinct by varying the seed
        batch = [EvalTask(i, t.expr, CFG, i) for i, t in enumerate(batch)]
        out = sched.evaluate(batch)
    assert [e.task_id for e in out] == list(range(16))
    assert sorted(trainer.calls, key=str) == sorted(((activation_name(t.expr), t.seed) for t in batch), key=str)
    assert sched.train_calls == 16


def test_duplicates_are_served_from_cache(ds):
    trainer = FakeTrainer()
    with EvalScheduler(ds, workers=2, train_fn=trainer) as sched:
        out = sched.evaluate(tasks([EXPRS[0], EXPRS[1], EXPRS[0]]))
        again = sched.evaluate(tasks([EXPRS[1]], start=10))
    assert len(trainer.calls) == 2
    assert out[2].record.cached and out[2].record.wall_ms == 0
    assert out[2].record.ranking_dict() == out[0].record.ranking_dict()
    assert again[0].worker_id == CACHED_WORKER
    assert again[0].record.val_accuracy == out[1].record.val_accuracy


def test_commutative_spellings_share_a_cache_entry(ds):
    trainer = FakeTrainer()
    with EvalScheduler(ds, train_fn=trainer) as sched:
        sched.evaluate(tasks(["max(id(x), const)"]))
        out = sched.evaluate(tasks(["max(const, id(x))"], start=1))
    assert len(trainer.calls) == 1 and out[0].record.cached


def test_results_independent_of_worker_count(ds):
    boards = []
    for workers in (1, 2, 8):
        with EvalScheduler(ds, workers=workers, train_fn=FakeTrainer()) as sched:
            out = sched.evaluate(tasks(EXPRS))
        board = Leaderboard()
        board.extend(e.record for e in out)
        boards.append(board.to_jsonl())
    assert boards[0] == boards[1] == boards[2]


def test_cache_lookup(ds):
    with EvalScheduler(ds, train_fn=FakeTrainer()) as sched:
        assert sched.cache_lookup("max(const, id(x))", CFG) is None
        rec = sched.evaluate(tasks(["max(id(x), const)"]))[0].record
        hit = sched.cache_lookup("max(const, id(x))", CFG)
        assert hit == rec
        assert sched.cache_lookup("max(const, id(x))", CFG, seed=1) is None
        assert sched.cache_lookup("max(const, id(x))", ChildConfig(steps=2)) is None


def test_panic_is_retried_once(ds):
    trainer = FakeTrainer(fail_times=1)
    with EvalScheduler(ds, train_fn=trainer) as sched:
        rec = sched.evaluate(tasks([EXPRS[0]]))[0].record
    assert len(trainer.calls) == 2
    assert not rec.diverged


def test_persistent_panic_recorded_as_diverged(ds):
    trainer = FakeTrainer(fail_times=10)
    with EvalScheduler(ds, train_fn=trainer) as sched:
        rec = sched.evaluate(tasks([EXPRS[0]]))[0].record
    assert len(trainer.calls) == 2
    assert rec.diverged and rec.val_accuracy == 0.0


def test_rejects_duplicate_ids_and_empty_batches(ds):
    with EvalScheduler(ds, train_fn=FakeTrainer()) as sched:
        with pytest.raises(ValueError):
            sched.submit_batch([])
        sched.evaluate(tasks([EXPRS[0]]))
        with pytest.raises(ValueError):
            sched.submit_batch(tasks([EXPRS[1]]))
    with pytest.raises(ValueError):
        EvalScheduler(ds, workers=0)


def test_more_workers_than_tasks(ds):
    with EvalScheduler(ds, workers=8, train_fn=FakeTrainer()) as sched:
        ticket = sched.submit_batch(tasks(EXPRS[:2]))
        assert len(sched.await_batch(ticket, timeout=10)) == 2


def test_interleaved_batches(ds):
    with EvalScheduler(ds, workers=3, train_fn=FakeTrainer()) as sched:
        t1 = sched.submit_batch(tasks(EXPRS[:4]))
        t2 = sched.submit_batch(tasks(EXPRS[2:6], start=100))
        b2 = sched.await_batch(t2, timeout=10)
        b1 = sched.await_batch(t1, timeout=10)
    assert [e.task_id for e in b1] == [0, 1, 2, 3]
    assert [e.task_id for e in b2] == [100, 101, 102, 103]
    assert b1[2].record.val_accuracy == b2[0].record.val_accuracy


def test_persistent_cache_resumes(tmp_path, ds):
    path = tmp_path / "cache.jsonl"
    first = FakeTrainer()
    with EvalScheduler(ds, train_fn=first, cache=RewardCache(str(path))) as sched:
        sched.evaluate(tasks(EXPRS[:3]))
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert set(json.loads(lines[0])) == {"key", "record"}
    second = FakeTrainer()
    with EvalScheduler(ds, train_fn=second, cache=RewardCache(str(path))) as sched:
        out = sched.evaluate(tasks(EXPRS[:4]))
    assert len(second.calls) == 1
    assert all(e.record.cached for e in out[:3])


def test_truncated_trailing_line_is_tolerated(tmp_path):
    path = tmp_path / "cache.jsonl"
    rec = RewardRecord("relu", 0.5, 0.1, False, 1, 0)
    good = json.dumps({"key": cache_key("relu", "h", 0), "record": rec.to_dict()})
    path.write_text(good + "\n" + good[:20])
    cache = RewardCache(str(path))
    assert len(cache) == 1
    path.write_text(good[:20] + "\n" + good + "\n")
    with pytest.raises(ValueError):
        RewardCache(str(path))


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(12))))
def test_aggregation_is_order_independent(order):
    records = [
        RewardRecord(EXPRS[i % len(EXPRS)], (i * 37 % 11) / 10, 0.0, i % 5 == 0, i, 0)
        for i in range(12)
    ]
    ref = Leaderboard()
    ref.extend(records)
    shuffled = Leaderboard()
    shuffled.extend(records[i] for i in order)
    assert shuffled.to_jsonl() == ref.to_jsonl()
