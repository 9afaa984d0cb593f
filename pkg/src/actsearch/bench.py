"""Benchmark activations against each other and aggregate with a sign test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .child import ChildConfig, DatasetKind, activation_name, make_dataset, resolve_activation
from .exceptions import EmptyComparison
from .scheduler import EvalScheduler, EvalTask, RewardCache

#: accuracy differences below this count as a tie
TIE_TOLERANCE = 0.002

DESK_SUITE = (DatasetKind.TWO_SPIRALS, DatasetKind.XOR_RINGS, DatasetKind.GAUSS_BLOBS_HARD)

BENCH_CHILD_CONFIG = ChildConfig(per_unit_params=True)


def sign_test(wins, ties, losses):
    """One-sided sign test: ``P(X >= wins)`` for ``X ~ Binomial(wins + losses, 1/2)``.

    Ties carry no information about direction and are dropped.
    """
    for v in (wins, ties, losses):
        if int(v) != v or v < 0:
            raise ValueError("counts must be non-negative integers")
    n = wins + losses
    if n == 0:
        raise EmptyComparison("no wins or losses to compare")
    tail = sum(math.comb(n, k) for k in range(wins, n + 1))
    return tail / 2 ** n


def compare(reference, other, tol=TIE_TOLERANCE):
    """``+1`` if ``reference`` beats ``other`` by at least ``tol``, ``-1`` if it loses, else 0."""
    d = reference - other
    if abs(d) < tol:
        return 0
    return 1 if d > 0 else -1


@dataclass(frozen=True)
class Row:
    activation: str
    task: str
    lr: float
    seed: int
    accuracy: float


@dataclass(frozen=True)
class SignSummary:
    reference: str
    baseline: str
    wins: int
    ties: int
    losses: int
    p_value: float | None


@dataclass
class ComparisonTable:
    """Per-run accuracies plus the medians they aggregate to."""

    rows: list = field(default_factory=list)
    selected_lr: dict = field(default_factory=dict)  # (activation, task) -> lr

    def labels(self):
        return list(dict.fromkeys(r.activation for r in self.rows))

    def tasks(self):
        return list(dict.fromkeys(r.task for r in self.rows))

    def accuracies(self, activation, task, lr=None):
        lr = self.selected_lr.get((activation, task)) if lr is None else lr
        return [r.accuracy for r in self.rows
                if r.activation == activation and r.task == task and r.lr == lr]

    def median(self, activation, task, lr=None):
        return float(np.median(self.accuracies(activation, task, lr)))

    def to_csv(self):
        lines = ["activation,task,lr,seed,accuracy"]
        lines += [f"{r.activation},{r.task},{r.lr!r},{r.seed},{r.accuracy!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def medians_csv(self):
        lines = ["activation,task,lr,median_accuracy"]
        for a in self.labels():
            for t in self.tasks():
                lr = self.selected_lr[(a, t)]
                lines.append(f"{a},{t},{lr!r},{self.median(a, t)!r}")
        return "\n".join(lines) + "\n"


@dataclass
class BenchmarkResult:
    table: ComparisonTable
    summary: list

    def summary_csv(self):
        lines = ["reference,baseline,wins,ties,losses,p_value"]
        for s in self.summary:
            p = "" if s.p_value is None else repr(s.p_value)
            lines.append(f"{s.reference},{s.baseline},{s.wins},{s.ties},{s.losses},{p}")
        return "\n".join(lines) + "\n"


def _labels(activations):
    seen = {}
    out = []
    for a in activations:
        name = activation_name(a)
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}#{seen[name]}")
    return out


def _grid_for(name, lr_grid, base_lr):
    return (base_lr,) if name == "relu" else lr_grid


def run_benchmark(tasks=DESK_SUITE, activations=("swish1", "relu"), seeds=range(5),
                  child_cfg=BENCH_CHILD_CONFIG, *, lr_grid=None, n=2000, data_seed=0,
                  workers=1, cache=None, tol=TIE_TOLERANCE):
    """Train every activation on every task for every seed and learning rate.

    Non-ReLU activations try every learning rate in ``lr_grid`` (default
    ``lr`` and ``lr / 2``) and keep the one with the best median accuracy;
    ReLU, whose hyperparameters the base config already targets, runs at
    ``lr`` only.  The first activation is the reference that every other one
    is sign-tested against.
    """
    tasks = [DatasetKind(t) for t in tasks]
    if not tasks:
        raise EmptyComparison("empty task suite")
    if len(activations) < 2:
        raise ValueError("need at least two activations")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    lr_grid = tuple(lr_grid or (child_cfg.lr, child_cfg.lr / 2))
    labels = _labels(activations)
    names = [activation_name(a) for a in activations]
    table = ComparisonTable()
    cache = cache if cache is not None else RewardCache()
    for kind in tasks:
        ds = make_dataset(kind, n=n, seed=data_seed)
        with EvalScheduler(ds, workers=workers, cache=cache) as sched:
            plan = [(label, name, lr, s)
                    for label, name in zip(labels, names)
                    for lr in _grid_for(name, lr_grid, child_cfg.lr) for s in seeds]
            tasks_ = [EvalTask(i, name, replace(child_cfg, lr=lr), s)
                      for i, (_, name, lr, s) in enumerate(plan)]
            for (label, _, lr, s), env in zip(plan, sched.evaluate(tasks_)):
                table.rows.append(Row(label, kind.value, lr, s, env.record.val_accuracy))
        for label, name in zip(labels, names):
            # max() keeps the first grid entry on ties
            table.selected_lr[(label, kind.value)] = max(
                _grid_for(name, lr_grid, child_cfg.lr),
                key=lambda lr: table.median(label, kind.value, lr))
    summary = []
    ref = labels[0]
    for other in labels[1:]:
        outcomes = [compare(table.median(ref, t.value), table.median(other, t.value), tol)
                    for t in tasks]
        w, ti, lo = outcomes.count(1), outcomes.count(0), outcomes.count(-1)
        p = sign_test(w, ti, lo) if w + lo else None
        summary.append(SignSummary(ref, other, w, ti, lo, p))
    return BenchmarkResult(table, summary)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    x: np.ndarray
    f: np.ndarray
    fprime: np.ndarray

    def to_csv(self):
        lines = ["x,f,fprime"]
        lines += [f"{a!r},{b!r},{c!r}" for a, b, c in
                  zip(self.x.tolist(), self.f.tolist(), self.fprime.tolist())]
        return "\n".join(lines) + "\n"


def export_curves(activation, x_lo=-5.0, x_hi=5.0, n=1001, params=None):
    """Sample ``f`` and its analytic derivative on a uniform grid."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not x_lo < x_hi:
        raise ValueError("need x_lo < x_hi")
    act = resolve_activation(activation)
    x = np.linspace(x_lo, x_hi, n)
    plist = list(act.default_params() if params is None else params)
    if len(plist) != act.n_params:
        raise ValueError(f"{activation_name(act)} takes {act.n_params} parameters")
    with np.errstate(all="ignore"):
        y, cache = act.forward(x, plist)
        dx = act.backward(np.ones_like(x), cache)[0]
    return Curve(x, np.broadcast_to(y, x.shape).astype(float),
                 np.broadcast_to(dx, x.shape).astype(float))
