"""Exhaustive enumeration of small activation spaces and the reward leaderboard."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

from .child import ChildConfig, RewardRecord
from .dsl import COMMUTATIVE, X, ActivationExpr, BinaryOp, CoreUnit, UnaryOp, operand_string
from .exceptions import SpaceTooLarge
from .scheduler import EvalScheduler, EvalTask

DEFAULT_BUDGET = 10_000

#: cheap child protocol for full-space sweeps on a single machine
SEARCH_CHILD_CONFIG = ChildConfig(hidden_widths=(16, 16), steps=300, batch_size=64, lr=0.1)


@dataclass(frozen=True)
class SpaceConfig:
    num_units: int = 1
    allowed_unary: tuple = tuple(UnaryOp)
    allowed_binary: tuple = tuple(BinaryOp)
    dedup: bool = False

    def __post_init__(self):
        object.__setattr__(self, "allowed_unary", tuple(UnaryOp(u) for u in self.allowed_unary))
        object.__setattr__(self, "allowed_binary", tuple(BinaryOp(b) for b in self.allowed_binary))
        if not 1 <= self.num_units <= 4:
            raise ValueError("num_units must be between 1 and 4")
        if not self.allowed_unary or not self.allowed_binary:
            raise ValueError("op subsets must be nonempty")
        if len(set(self.allowed_unary)) != len(self.allowed_unary):
            raise ValueError("duplicate unary op")
        if len(set(self.allowed_binary)) != len(self.allowed_binary):
            raise ValueError("duplicate binary op")


def _operands(cfg, unit_index):
    """Every (unary op, input ref) choice for one operand of unit ``unit_index``."""
    refs = (X, *range(unit_index))
    out = []
    for u in cfg.allowed_unary:
        # const ignores its input, so it is wired to x only
        for ref in (X,) if u is UnaryOp.CONST else refs:
            out.append((u, ref))
    return out


def _unit_count(cfg, unit_index):
    m = len(_operands(cfg, unit_index))
    if not cfg.dedup:
        return len(cfg.allowed_binary) * m * m
    commutative = sum(1 for b in cfg.allowed_binary if b in COMMUTATIVE)
    return commutative * m * (m + 1) // 2 + (len(cfg.allowed_binary) - commutative) * m * m


def count_space(cfg):
    """Closed-form number of expressions :func:`enumerate_space` yields."""
    return math.prod(_unit_count(cfg, i) for i in range(cfg.num_units))


def _unit_choices(cfg, unit_index):
    ops = _operands(cfg, unit_index)
    for b in cfg.allowed_binary:
        for (u1, in1), (u2, in2) in itertools.product(ops, ops):
            if (cfg.dedup and b in COMMUTATIVE
                    and operand_string(u2, in2) < operand_string(u1, in1)):
                continue
            yield CoreUnit(u1, u2, b, in1, in2)


def enumerate_space(cfg):
    """Lazily yield every expression of the space exactly once.

    With ``cfg.dedup`` only canonical representatives (sorted operands of
    commutative binaries) are produced.
    """
    per_unit = [list(_unit_choices(cfg, i)) for i in range(cfg.num_units)]
    for units in itertools.product(*per_unit):
        yield ActivationExpr(units)


class Leaderboard:
    """Candidates ranked by validation accuracy (desc), then canonical string.

    Diverged candidates always rank last.  The ranking depends only on the
    multiset of records added, never on arrival order.
    """

    def __init__(self, capacity=None):
        self.capacity = capacity
        self._best = {}

    @staticmethod
    def _key(record):
        return (record.diverged, -record.val_accuracy, record.expr)

    @classmethod
    def _total_key(cls, record):
        return cls._key(record) + (json.dumps(record.ranking_dict(), sort_keys=True),)

    def add(self, record):
        current = self._best.get(record.expr)
        if current is None or self._total_key(record) < self._total_key(current):
            self._best[record.expr] = record

    def extend(self, records):
        for r in records:
            self.add(r)

    def all_entries(self):
        return sorted(self._best.values(), key=self._key)

    @property
    def entries(self):
        ranked = self.all_entries()
        return ranked if self.capacity is None else ranked[: self.capacity]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def top(self):
        ranked = self.entries
        return ranked[0] if ranked else None

    def rank_of(self, expr):
        """1-based rank of a canonical string among all entries, or None."""
        for i, r in enumerate(self.all_entries(), 1):
            if r.expr == expr:
                return i
        return None

    def decile_threshold(self):
        """Reward a candidate needs to sit in the top tenth (ties included)."""
        ranked = self.all_entries()
        if not ranked:
            return None
        return ranked[math.ceil(len(ranked) / 10) - 1].val_accuracy

    def to_jsonl(self):
        return "".join(
            json.dumps({"rank": i, **r.ranking_dict()}, sort_keys=True) + "\n"
            for i, r in enumerate(self.entries, 1)
        )

    @classmethod
    def from_jsonl(cls, text, capacity=None):
        board = cls(capacity)
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                d.pop("rank", None)
                board.add(RewardRecord.from_dict({**d, "wall_ms": 0}))
        return board


def evaluate_exprs(scheduler, exprs, child_cfg, chunk=512):
    """Push canonical forms of ``exprs`` through the scheduler; return records in order."""
    records = []
    it = iter(exprs)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return records
        tasks = [
            EvalTask(scheduler.next_task_id(), e.canonical_string(), child_cfg, child_cfg.seed)
            for e in block
        ]
        records.extend(env.record for env in scheduler.evaluate(tasks))


def run_exhaustive(cfg, ds, child_cfg=SEARCH_CHILD_CONFIG, top_k=None, *, workers=1,
                   budget=DEFAULT_BUDGET, scheduler=None, cache=None):
    """Evaluate every candidate of ``cfg`` once and return the :class:`Leaderboard`."""
    count = count_space(cfg)
    if count > budget:
        raise SpaceTooLarge(count, budget)
    own = scheduler is None
    if own:
        scheduler = EvalScheduler(ds, workers=workers, cache=cache)
    try:
        board = Leaderboard(top_k)
        board.extend(evaluate_exprs(scheduler, enumerate_space(cfg), child_cfg))
    finally:
        if own:
            scheduler.close()
    return board
