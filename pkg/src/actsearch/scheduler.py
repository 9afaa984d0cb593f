"""In-process evaluation queue: worker threads train child networks.

The search driver submits a batch of :class:`EvalTask` objects and later
collects exactly one :class:`EvalResultEnvelope` per task.  Completed
rewards are cached under ``(canonical string, config hash, seed)``, so a
candidate is trained at most once per configuration; the cache can be backed
by an append-only JSON-lines file for resumable searches.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import queue
import threading
from dataclasses import dataclass, replace

from .child import ChildConfig, RewardRecord, activation_name, resolve_activation, train_child
from .exceptions import WorkerPanic

logger = logging.getLogger(__name__)

CACHED_WORKER = -1


@dataclass(frozen=True)
class EvalTask:
    task_id: int
    expr: str
    child_cfg: ChildConfig
    seed: int


@dataclass(frozen=True)
class EvalResultEnvelope:
    task_id: int
    record: RewardRecord
    worker_id: int


def cache_key(expr, cfg_hash, seed):
    return f"{expr}|{cfg_hash}|{seed}"


class RewardCache:
    """Thread-safe reward cache, optionally persisted as ``{key, record}`` lines."""

    def __init__(self, path=None):
        self.path = path
        self._lock = threading.Lock()
        self._records = {}
        if path and os.path.exists(path):
            self._load(path)

    def _load(self, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        for lineno, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                self._records[item["key"]] = RewardRecord.from_dict(item["record"])
            except (ValueError, KeyError, TypeError):
                if lineno >= len(lines) - 2:
                    logger.warning("ignoring truncated final line in %s", path)
                    continue
                raise

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def get(self, key):
        with self._lock:
            return self._records.get(key)

    def put(self, key, record):
        with self._lock:
            if key in self._records:
                return
            self._records[key] = record
            if self.path:
                line = json.dumps({"key": key, "record": record.to_dict()}, sort_keys=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")


class _Batch:
    def __init__(self, tasks):
        self.order = [t.task_id for t in tasks]
        self.results = {}
        self.size = len(tasks)
        self.done = threading.Condition()


class EvalScheduler:
    """Worker pool training child networks for submitted tasks.

    ``train_fn(expr, dataset, cfg) -> RewardRecord`` defaults to
    :func:`~actsearch.child.train_child`.  Use as a context manager or call
    :meth:`close` to stop the workers.
    """

    def __init__(self, dataset, workers=1, cache=None, train_fn=train_child):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.dataset = dataset
        self.workers = workers
        self.cache = cache if cache is not None else RewardCache()
        self.train_fn = train_fn
        self.train_calls = 0
        self._queue = queue.Queue()
        self._lock = threading.Lock()
        self._inflight = {}  # cache key -> list of (batch, task) waiting on it
        self._batches = {}
        self._tickets = itertools.count()
        self._seen_ids = set()
        self._ids = itertools.count()
        self._threads = [
            threading.Thread(target=self._work, args=(i,), daemon=True, name=f"eval-worker-{i}")
            for i in range(workers)
        ]
        for t in self._threads:
            t.start()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join()
        self._threads = []

    def next_task_id(self):
        with self._lock:
            return next(self._ids)

    def key_for(self, expr, cfg, seed):
        """Cache key; ``expr`` may be any spelling, it is canonicalised first."""
        return cache_key(activation_name(expr), cfg.hash(self.dataset.id), seed)

    def cache_lookup(self, expr, cfg, seed=None):
        """Cached record for ``expr`` under ``cfg`` (and ``seed``), else None."""
        seed = cfg.seed if seed is None else seed
        return self.cache.get(self.key_for(expr, cfg, seed))

    # -- producer side -----------------------------------------------------------

    def submit_batch(self, tasks):
        tasks = list(tasks)
        if not tasks:
            raise ValueError("empty batch")
        ticket = next(self._tickets)
        batch = _Batch(tasks)
        self._batches[ticket] = batch
        for task in tasks:
            if task.task_id in self._seen_ids:
                raise ValueError(f"duplicate task id {task.task_id}")
            self._seen_ids.add(task.task_id)
            key = self.key_for(task.expr, task.child_cfg, task.seed)
            with self._lock:
                hit = self.cache.get(key)
                if hit is None:
                    waiting = self._inflight.get(key)
                    if waiting is not None:
                        waiting.append((batch, task))
                        continue
                    self._inflight[key] = []
            if hit is not None:
                self._deliver(batch, task, replace(hit, cached=True, wall_ms=0), CACHED_WORKER)
            else:
                self._queue.put((key, batch, task))
        return ticket

    def await_batch(self, ticket, timeout=None):
        """Block until every task of ``ticket`` is done; results in submission order."""
        batch = self._batches.pop(ticket)
        with batch.done:
            if not batch.done.wait_for(lambda: len(batch.results) == batch.size, timeout):
                raise TimeoutError(f"batch {ticket} did not finish")
        return [batch.results[tid] for tid in batch.order]

    def evaluate(self, tasks):
        return self.await_batch(self.submit_batch(tasks))

    # -- consumer side ---------------------------------------------------------

    def _deliver(self, batch, task, record, worker_id):
        with batch.done:
            batch.results[task.task_id] = EvalResultEnvelope(task.task_id, record, worker_id)
            batch.done.notify_all()

    def _run(self, task):
        expr = resolve_activation(task.expr)
        cfg = task.child_cfg.with_seed(task.seed)
        for attempt in (1, 2):
            try:
                with self._lock:
                    self.train_calls += 1
                return self.train_fn(expr, self.dataset, cfg)
            except Exception as err:  # noqa: BLE001 - any training crash is a panic
                panic = WorkerPanic(task.task_id, err)
                logger.warning("%s (attempt %d)", panic, attempt)
        return RewardRecord(activation_name(expr), 0.0, float("nan"), True, 0, task.seed)

    def _work(self, worker_id):
        while True:
            item = self._queue.get()
            if item is None:
                return
            key, batch, task = item
            record = self._run(task)
            self.cache.put(key, record)
            with self._lock:
                followers = self._inflight.pop(key, [])
            self._deliver(batch, task, record, worker_id)
            cached = replace(record, cached=True, wall_ms=0)
            for other_batch, other in followers:
                self._deliver(other_batch, other, cached, CACHED_WORKER)
