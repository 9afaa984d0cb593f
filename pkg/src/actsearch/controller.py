"""Recurrent controller that proposes activation functions, trained with PPO.

The controller emits one component per timestep.  Each core unit is
described by five slots, in order::

    unary 1, input 1, unary 2, input 2, binary

and every slot has its own softmax head whose support is exactly the legal
choices for that slot, so every sampled sequence decodes to a valid
expression.  Input slots of unit 0, and the input slot following a ``const``
unary, admit a single choice (``x``); such slots are *forced*: their
log-probability is 0 and they are left out of the PPO objective.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .autodiff import Adam, Tape, Tensor, parameter
from .child import ChildConfig, RewardRecord
from .dsl import X, ActivationExpr, BinaryOp, CoreUnit, UnaryOp
from .exhaustive import (
    SEARCH_CHILD_CONFIG,
    Leaderboard,
    SpaceConfig,
    count_space,
    evaluate_exprs,
)
from .scheduler import EvalScheduler


# ---------------------------------------------------------------------------
# baseline and configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmaBaseline:
    value: float = 0.0
    decay: float = 0.95
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")


def ema_update(baseline, reward):
    """First reward initialises the average; later ones are blended in."""
    if not baseline.initialized:
        return EmaBaseline(float(reward), baseline.decay, True)
    value = baseline.decay * baseline.value + (1.0 - baseline.decay) * reward
    return EmaBaseline(value, baseline.decay, True)


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    epochs_per_batch: int = 4
    batch_size: int = 16
    lr: float = 1e-3
    entropy_coef: float = 0.01

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.epochs_per_batch < 1 or self.batch_size < 1:
            raise ValueError("epochs_per_batch and batch_size must be >= 1")


@dataclass(frozen=True)
class ControllerConfig:
    hidden_size: int = 64
    embed_size: int = 32
    init_scale: float = 0.1
    ema_decay: float = 0.95
    ppo: PpoConfig = field(default_factory=PpoConfig)


# ---------------------------------------------------------------------------
# slots and vocabulary
# ---------------------------------------------------------------------------

class Slot(NamedTuple):
    kind: str  # "unary", "input" or "binary"
    unit: int
    position: int  # operand 0/1; 2 for the binary slot
    choices: tuple  # token names


def build_slots(space):
    slots = []
    for i in range(space.num_units):
        refs = ("x",) + tuple(f"u{j}" for j in range(i))
        for pos in (0, 1):
            slots.append(Slot("unary", i, pos, tuple(u.value for u in space.allowed_unary)))
            slots.append(Slot("input", i, pos, refs))
        slots.append(Slot("binary", i, 2, tuple(b.value for b in space.allowed_binary)))
    return slots


VOCAB = (
    ("<start>",)
    + tuple(u.value for u in UnaryOp)
    + tuple(b.value for b in BinaryOp)
    + ("x", "u0", "u1", "u2")
)
_TOKEN_ID = {tok: i for i, tok in enumerate(VOCAB)}
# unary and binary names are disjoint except none; inputs are disjoint too
assert len(_TOKEN_ID) == len(VOCAB)


class Sample(NamedTuple):
    expr: ActivationExpr
    tokens: np.ndarray  # choice index per slot
    log_probs: np.ndarray  # log-prob per slot under the sampling policy (0 if forced)
    active: np.ndarray  # bool per slot: not forced


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------

class Controller:
    """Single-layer GRU policy with one softmax head per slot."""

    def __init__(self, space=SpaceConfig(), cfg=ControllerConfig(), seed=0):
        self.space = space
        self.cfg = cfg
        self.slots = build_slots(space)
        self.step = 0
        rng = np.random.default_rng(seed)
        H, E, s = cfg.hidden_size, cfg.embed_size, cfg.init_scale

        def init(*shape):
            return parameter(rng.uniform(-s, s, size=shape))

        self.params = {"embedding": init(len(VOCAB), E)}
        for gate in ("z", "r", "n"):
            self.params[f"W{gate}"] = init(E, H)
            self.params[f"U{gate}"] = init(H, H)
            self.params[f"b{gate}"] = parameter(np.zeros(H))
        for t, slot in enumerate(self.slots):
            self.params[f"head{t}_W"] = init(H, len(slot.choices))
            self.params[f"head{t}_b"] = parameter(np.zeros(len(slot.choices)))
        self.optimizer = Adam(cfg.ppo.lr)
        # token id fed back after each slot, per choice index
        self._feed = [np.array([_TOKEN_ID[c] for c in slot.choices]) for slot in self.slots]

    @property
    def param_list(self):
        return list(self.params.values())

    # -- recurrent core ------------------------------------------------------

    def _gru(self, tape, x, h):
        p = self.params

        def gate(name, hin):
            return tape.add(tape.add(tape.matmul(x, p[f"W{name}"]), tape.matmul(hin, p[f"U{name}"])),
                            p[f"b{name}"])

        z = tape.sigmoid(gate("z", h))
        r = tape.sigmoid(gate("r", h))
        n = tape.tanh(gate("n", tape.mul(r, h)))
        return tape.add(n, tape.mul(z, tape.sub(h, n)))

    def _head(self, tape, h, t):
        logits = tape.add(tape.matmul(h, self.params[f"head{t}_W"]), self.params[f"head{t}_b"])
        return tape.log_softmax(logits)

    def _forced(self, t, prev_unary_choice):
        slot = self.slots[t]
        if len(slot.choices) == 1:
            return True
        return slot.kind == "input" and prev_unary_choice == UnaryOp.CONST.value

    def _unroll(self, tape, tokens=None, k=None, rng=None):
        """Run the policy over all slots.

        With ``tokens`` (shape ``(k, T)``) the choices are teacher-forced;
        otherwise they are sampled with ``rng``.  Returns per-slot lists of
        log-softmax tensors, chosen indices and active masks.
        """
        k = len(tokens) if tokens is not None else k
        h = Tensor(np.zeros((k, self.cfg.hidden_size)))
        prev = np.full(k, _TOKEN_ID["<start>"])
        logps, chosen, actives = [], [], []
        last_unary = np.array([None] * k, dtype=object)
        for t, slot in enumerate(self.slots):
            x = tape.embed(self.params["embedding"], prev)
            h = self._gru(tape, x, h)
            logp = self._head(tape, h, t)
            active = np.array([not self._forced(t, last_unary[i]) for i in range(k)])
            if tokens is not None:
                choice = np.asarray(tokens[:, t])
            else:
                probs = np.exp(logp.data)
                choice = np.zeros(k, dtype=int)
                for i in range(k):
                    if active[i]:
                        choice[i] = _sample_index(probs[i], rng)
            if slot.kind == "unary":
                last_unary = np.array([slot.choices[c] for c in choice], dtype=object)
            logps.append(logp)
            chosen.append(choice)
            actives.append(active)
            prev = self._feed[t][choice]
        return logps, chosen, actives

    def decode(self, tokens):
        """Expression described by one row of choice indices."""
        units = []
        vals = [slot.choices[c] for slot, c in zip(self.slots, tokens)]
        for i in range(self.space.num_units):
            u1, in1, u2, in2, b = vals[5 * i: 5 * i + 5]
            units.append(CoreUnit(UnaryOp(u1), UnaryOp(u2), BinaryOp(b), _ref(in1), _ref(in2)))
        return ActivationExpr(tuple(units))

    def encode(self, expr):
        """Choice indices for ``expr`` (inverse of :meth:`decode`)."""
        out = []
        for unit in expr.units:
            for val, slot_kind in ((unit.u1.value, "unary"), (_ref_name(unit.in1), "input"),
                                   (unit.u2.value, "unary"), (_ref_name(unit.in2), "input"),
                                   (unit.b.value, "binary")):
                slot = self.slots[len(out)]
                assert slot.kind == slot_kind
                out.append(slot.choices.index(val))
        return np.array(out)

    # -- policy API ------------------------------------------------------------

    def sample(self, k, rng):
        tape = Tape()
        logps, chosen, actives = self._unroll(tape, k=k, rng=rng)
        tokens = np.stack(chosen, axis=1)
        active = np.stack(actives, axis=1)
        lp = np.stack([l.data[np.arange(k), c] for l, c in zip(logps, chosen)], axis=1)
        lp = np.where(active, lp, 0.0)
        return [Sample(self.decode(tokens[i]), tokens[i], lp[i], active[i]) for i in range(k)]

    def distributions(self, tokens):
        """Per-slot probability vectors along teacher-forced ``tokens`` (k, T)."""
        logps, _, _ = self._unroll(Tape(), tokens=np.atleast_2d(tokens))
        return [np.exp(l.data) for l in logps]

    def slot_probability(self, slot_index, choice, tokens):
        """Mean probability of ``choice`` at ``slot_index`` given each row's prefix."""
        probs = self.distributions(tokens)[slot_index]
        idx = self.slots[slot_index].choices.index(choice) if isinstance(choice, str) else choice
        return float(probs[:, idx].mean())

    def surrogate(self, tape, samples, advantages, clip_eps, entropy_coef):
        """Build the (negated) clipped PPO objective on ``tape``.

        Returns ``(loss, diagnostics)``.
        """
        tokens = np.stack([s.tokens for s in samples])
        old = np.stack([s.log_probs for s in samples])
        active = np.stack([s.active for s in samples])
        adv = np.asarray(advantages, dtype=float)
        logps, _, _ = self._unroll(tape, tokens=tokens)
        n_active = max(int(active.sum()), 1)
        total = None
        ent_total = None
        ratios, clipped = [], []
        for t, logp in enumerate(logps):
            mask = active[:, t].astype(float)
            if not mask.any():
                continue
            new = tape.pick(logp, tokens[:, t])
            ratio = tape.exp(tape.sub(new, old[:, t]))
            s1 = tape.mul(ratio, adv)
            s2 = tape.mul(tape.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
            term = tape.sum(tape.mul(tape.minimum(s1, s2), mask))
            total = term if total is None else tape.add(total, term)
            ent = tape.sum(tape.mul(tape.exp(logp), logp), axis=1)  # = -entropy per row
            ent = tape.sum(tape.mul(ent, mask))
            ent_total = ent if ent_total is None else tape.add(ent_total, ent)
            sel = mask.astype(bool)
            ratios.extend(ratio.data[sel])
            clipped.extend(np.abs(ratio.data[sel] - 1.0) > clip_eps)
        if total is None:
            return None, {"mean_ratio": 1.0, "clip_fraction": 0.0, "entropy": 0.0}
        objective = tape.mul(total, 1.0 / n_active)
        neg_entropy = tape.mul(ent_total, 1.0 / n_active)
        loss = tape.sub(tape.mul(neg_entropy, entropy_coef), objective)
        diag = {
            "mean_ratio": float(np.mean(ratios)),
            "clip_fraction": float(np.mean(clipped)),
            "entropy": float(-neg_entropy.data),
            "objective": float(objective.data),
        }
        return loss, diag

    # -- persistence -----------------------------------------------------------

    def checkpoint(self):
        return {
            "space": {
                "num_units": self.space.num_units,
                "allowed_unary": [u.value for u in self.space.allowed_unary],
                "allowed_binary": [b.value for b in self.space.allowed_binary],
                "dedup": self.space.dedup,
            },
            "config": asdict(self.cfg),
            "step": self.step,
            "params": {k: v.data.tolist() for k, v in self.params.items()},
            "adam": self.optimizer.state_dict(self.param_list),
        }

    def to_json(self):
        return json.dumps(self.checkpoint(), sort_keys=True)

    @classmethod
    def from_checkpoint(cls, data):
        space = SpaceConfig(**data["space"])
        conf = dict(data["config"])
        conf["ppo"] = PpoConfig(**conf["ppo"])
        ctrl = cls(space, ControllerConfig(**conf))
        for k, v in data["params"].items():
            ctrl.params[k].data = np.array(v, dtype=float)
        ctrl.step = data["step"]
        ctrl.optimizer.load_state_dict(data["adam"], ctrl.param_list)
        return ctrl

    @classmethod
    def from_json(cls, text):
        return cls.from_checkpoint(json.loads(text))


def _ref(name):
    return X if name == "x" else int(name[1:])


def _ref_name(ref):
    return "x" if ref == X else f"u{ref}"


def _sample_index(p, rng):
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def sample_candidates(ctrl, k, seed):
    """``k`` samples from the current policy; ``seed`` may be an int or a Generator."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ctrl.sample(k, rng)


def ppo_update(ctrl, batch, baseline, cfg=None):
    """Apply ``cfg.epochs_per_batch`` clipped-surrogate steps to ``ctrl``.

    ``batch`` is a list of ``(Sample, reward)``; every slot of a sequence
    shares the advantage ``reward - baseline.value``.
    """
    cfg = cfg or ctrl.cfg.ppo
    if not batch:
        raise ValueError("empty batch")
    samples = [s for s, _ in batch]
    adv = np.array([r for _, r in batch], dtype=float) - baseline.value
    params = ctrl.param_list
    diag = {}
    for _ in range(cfg.epochs_per_batch):
        tape = Tape()
        loss, diag = ctrl.surrogate(tape, samples, adv, cfg.clip_eps, cfg.entropy_coef)
        if loss is None:
            break
        grads = tape.backward(loss)
        glist = [grads.get(p) for p in params]
        if all(g is None or not g.any() for g in glist):
            break
        ctrl.optimizer.step(params, glist)
    ctrl.step += 1
    diag["mean_advantage"] = float(adv.mean())
    return ctrl, diag


# ---------------------------------------------------------------------------
# search loop
# ---------------------------------------------------------------------------

def reward_evaluator(fn):
    """Wrap ``fn(expr) -> reward`` as an evaluator (no child training)."""

    def evaluate(exprs):
        return [
            RewardRecord(e.canonical_string(), float(fn(e)), 0.0, False, 0, 0) for e in exprs
        ]

    return evaluate


def scheduler_evaluator(scheduler, child_cfg):
    def evaluate(exprs):
        return evaluate_exprs(scheduler, exprs, child_cfg)

    return evaluate


@dataclass
class RLResult:
    leaderboard: Leaderboard
    controller: Controller
    baseline: EmaBaseline
    log: list


def run_rl_search(space, ds=None, child_cfg=SEARCH_CHILD_CONFIG, budget=1000, *,
                  ctrl_cfg=ControllerConfig(), seed=0, evaluator=None, scheduler=None,
                  workers=1, top_k=None, controller=None, cache=None, max_samples=None):
    """Sample, evaluate, update the EMA baseline, then take a PPO step; repeat.

    ``budget`` counts distinct candidates evaluated (child networks trained)
    and is capped at the number of distinct candidates in ``space``.  A candidate sampled again reuses its known reward for free.  Sampling
    also stops after ``max_samples`` draws (default ``100 * budget``), which
    guards against a converged policy that only revisits known candidates.
    Pass ``evaluator`` to score expressions without training child networks.
    """
    ctrl = controller or Controller(space, ctrl_cfg, seed=seed)
    rng = np.random.default_rng([seed, 1])
    board = Leaderboard(top_k)
    baseline = EmaBaseline(decay=ctrl.cfg.ema_decay)
    log = []
    if budget <= 0:
        return RLResult(board, ctrl, baseline, log)
    max_samples = 100 * budget if max_samples is None else max_samples
    own = evaluator is None and scheduler is None
    if evaluator is None:
        if scheduler is None:
            scheduler = EvalScheduler(ds, workers=workers, cache=cache)
        evaluator = scheduler_evaluator(scheduler, child_cfg)
    budget = min(budget, count_space(replace(space, dedup=True)))
    known = {}
    drawn = 0
    try:
        while len(known) < budget and drawn < max_samples:
            samples = ctrl.sample(ctrl.cfg.ppo.batch_size, rng)
            drawn += len(samples)
            fresh = []
            for smp in samples:
                key = smp.expr.canonical_string()
                if key not in known and key not in fresh and len(known) + len(fresh) < budget:
                    fresh.append(key)
            if fresh:
                exprs = {smp.expr.canonical_string(): smp.expr for smp in samples}
                for rec in evaluator([exprs[k] for k in fresh]):
                    known[rec.expr] = rec
                    board.add(rec)
            batch = [(smp, known[smp.expr.canonical_string()].val_accuracy)
                     for smp in samples if smp.expr.canonical_string() in known]
            rewards = [r for _, r in batch]
            for r in rewards:
                baseline = ema_update(baseline, r)
            _, diag = ppo_update(ctrl, batch, baseline)
            log.append({
                "step": ctrl.step,
                "sampled": drawn,
                "evaluated": len(known),
                "mean_reward": float(np.mean(rewards)),
                "baseline": baseline.value,
                "best": board.top().expr,
                **diag,
            })
    finally:
        if own:
            scheduler.close()
    return RLResult(board, ctrl, baseline, log)
