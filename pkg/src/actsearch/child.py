"""Child networks: small MLP classifiers whose nonlinearity is a candidate.

The reward of a candidate activation is the validation accuracy of an MLP
trained with it for a fixed number of steps on a synthetic 2-D task.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .autodiff import RMSProp, SGDMomentum, Tape, Tensor, parameter
from .baselines import Baseline, BaselineActivation
from .dsl import ActivationExpr, parse_expr
from .exceptions import LayerOutOfRange, NoTrainableBeta


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

class DatasetKind(enum.Enum):
    TWO_SPIRALS = "two_spirals"
    GAUSS_BLOBS = "gauss_blobs"
    GAUSS_BLOBS_HARD = "gauss_blobs_hard"
    XOR_RINGS = "xor_rings"


@dataclass(frozen=True, eq=False)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    kind: DatasetKind
    n: int
    seed: int

    @property
    def id(self):
        return f"{self.kind.value}-{self.n}-{self.seed}"

    @property
    def n_classes(self):
        return int(self.train_y.max()) + 1


def _two_spirals(n_per, rng, turns=1.25):
    t = rng.uniform(0.0, 1.0, size=(2, n_per))
    theta = t * turns * 2.0 * np.pi
    radius = 0.05 + 0.95 * t
    pts, labels = [], []
    for c in range(2):
        sign = 1.0 if c == 0 else -1.0
        xy = sign * np.stack([radius[c] * np.cos(theta[c]), radius[c] * np.sin(theta[c])], 1)
        pts.append(xy + rng.normal(scale=0.02, size=xy.shape))
        labels.append(np.full(n_per, c))
    return pts, labels


def _gauss_blobs(n_per, rng, radius):
    pts, labels = [], []
    for c in range(3):
        angle = 2.0 * np.pi * c / 3
        mean = radius * np.array([np.cos(angle), np.sin(angle)])
        pts.append(mean + rng.normal(size=(n_per, 2)))
        labels.append(np.full(n_per, c))
    return pts, labels


def _xor_rings_label(xy):
    inner = np.hypot(xy[:, 0], xy[:, 1]) < 1.2
    return (inner ^ (xy[:, 0] * xy[:, 1] > 0)).astype(int)


def _xor_rings(n_per, rng):
    pts = [[], []]
    while min(len(p) for p in pts) < n_per:
        xy = rng.uniform(-2.0, 2.0, size=(4 * n_per, 2))
        lab = _xor_rings_label(xy)
        for c in range(2):
            pts[c].extend(xy[lab == c])
    return [np.array(p[:n_per]) for p in pts], [np.full(n_per, c) for c in range(2)]


def make_dataset(kind, n=2000, seed=0, val_fraction=0.25):
    """Deterministic class-balanced synthetic dataset, standardised on train."""
    kind = DatasetKind(kind)
    if n < 40:
        raise ValueError("n must be at least 40")
    rng = np.random.default_rng([seed, list(DatasetKind).index(kind)])
    n_classes = 3 if kind in (DatasetKind.GAUSS_BLOBS, DatasetKind.GAUSS_BLOBS_HARD) else 2
    n_per = n // n_classes
    if kind is DatasetKind.TWO_SPIRALS:
        pts, labels = _two_spirals(n_per, rng)
    elif kind is DatasetKind.GAUSS_BLOBS:
        pts, labels = _gauss_blobs(n_per, rng, radius=5.0)
    elif kind is DatasetKind.GAUSS_BLOBS_HARD:
        pts, labels = _gauss_blobs(n_per, rng, radius=1.0)
    else:
        pts, labels = _xor_rings(n_per, rng)

    n_val = int(round(n_per * val_fraction))
    tr_x, tr_y, va_x, va_y = [], [], [], []
    for xy, lab in zip(pts, labels):
        order = rng.permutation(n_per)
        va_x.append(xy[order[:n_val]])
        va_y.append(lab[order[:n_val]])
        tr_x.append(xy[order[n_val:]])
        tr_y.append(lab[order[n_val:]])
    train_x, train_y = np.concatenate(tr_x), np.concatenate(tr_y)
    val_x, val_y = np.concatenate(va_x), np.concatenate(va_y)
    perm = rng.permutation(len(train_y))
    train_x, train_y = train_x[perm], train_y[perm]
    mu, sd = train_x.mean(axis=0), train_x.std(axis=0)
    return Dataset((train_x - mu) / sd, train_y, (val_x - mu) / sd, val_y, kind, n, seed)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def resolve_activation(activation):
    """Turn a name, canonical string, enum or object into an activation object."""
    if isinstance(activation, (ActivationExpr, BaselineActivation)):
        return activation
    if isinstance(activation, Baseline):
        return BaselineActivation(activation)
    if isinstance(activation, str):
        try:
            return BaselineActivation(Baseline(activation))
        except ValueError:
            return parse_expr(activation)
    raise TypeError(f"cannot interpret {activation!r} as an activation")


def activation_name(activation):
    act = resolve_activation(activation)
    if isinstance(act, ActivationExpr):
        return act.canonical_string()
    return act.name


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class ActivationMLPClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier with a pluggable elementwise activation.

    Parameters
    ----------
    activation : str, ActivationExpr or BaselineActivation
        Canonical expression string (``"max(id(x), const)"``) or baseline
        name (``"swish1"``).
    hidden_widths : tuple of int
    steps : int
        Number of minibatch updates; training stops early only on divergence.
    per_unit_params : bool
        One activation parameter per hidden unit instead of one per layer.
    train_activation_params : bool
        Whether activation parameters are updated by the optimizer.
    zero_init_output : bool
        Start the output layer at zero (all logits 0 before training).
    random_state : int
        Seeds initialisation and minibatch order.

    Attributes
    ----------
    diverged_ : bool
        A non-finite loss or parameter was seen during training.
    final_train_loss_ : float
        Loss of the last minibatch (``nan`` when diverged).
    """

    def __init__(self, activation="max(id(x), const)", hidden_widths=(64, 64),
                 steps=1000, batch_size=64, lr=0.05, momentum=0.9,
                 optimizer="sgd_momentum", per_unit_params=False,
                 train_activation_params=True, zero_init_output=False,
                 random_state=0):
        self.activation = activation
        self.hidden_widths = hidden_widths
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.optimizer = optimizer
        self.per_unit_params = per_unit_params
        self.train_activation_params = train_activation_params
        self.zero_init_output = zero_init_output
        self.random_state = random_state

    def _validate_params(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("hidden_widths must be positive")
        if self.optimizer not in ("sgd_momentum", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def _init(self, n_features, n_classes, rng):
        act = resolve_activation(self.activation)
        widths = [n_features, *self.hidden_widths, n_classes]
        self.activation_ = act
        self.coefs_, self.intercepts_, self.act_params_ = [], [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            if last and self.zero_init_output:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(scale=math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.coefs_.append(parameter(w))
            self.intercepts_.append(parameter(np.zeros(fan_out)))
            if last:
                continue
            init = act.default_params()
            if self.per_unit_params and init.size:
                init = np.repeat(init[:, None], fan_out, axis=1)
            beta = Tensor(init.copy(), requires_grad=self.train_activation_params)
            self.act_params_.append(beta if init.size else None)

    def _trainable(self):
        params = [*self.coefs_, *self.intercepts_]
        params += [p for p in self.act_params_ if p is not None and p.requires_grad]
        return params

    def _forward(self, tape, x, keep=None):
        h = x
        n_hidden = len(self.hidden_widths)
        for i in range(n_hidden + 1):
            z = tape.add_bias(tape.matmul(h, self.coefs_[i]), self.intercepts_[i])
            if keep is not None:
                keep.append(z.data)
            if i == n_hidden:
                return z
            h = tape.apply_activation(z, self.activation_, self.act_params_[i])

    def fit(self, X, y):
        self._validate_params()
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        labels = np.searchsorted(self.classes_, y)
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.random_state)
        self._init(X.shape[1], len(self.classes_), rng)
        params = self._trainable()
        if self.optimizer == "sgd_momentum":
            opt = SGDMomentum(self.lr, self.momentum)
        else:
            opt = RMSProp(self.lr)

        n = len(y)
        batch = min(self.batch_size, n)
        order = rng.permutation(n)
        cursor = 0
        self.diverged_ = False
        self.final_train_loss_ = float("nan")
        self.n_steps_ = 0
        with np.errstate(all="ignore"):
            for _ in range(self.steps):
                if cursor + batch > n:
                    order = rng.permutation(n)
                    cursor = 0
                idx = order[cursor:cursor + batch]
                cursor += batch
                tape = Tape()
                logits = self._forward(tape, X[idx])
                loss = tape.softmax_cross_entropy(logits, labels[idx])
                lval = float(loss.data)
                if not math.isfinite(lval):
                    self.diverged_ = True
                    break
                grads = tape.backward(loss)
                opt.step(params, [grads.get(p) for p in params])
                self.final_train_loss_ = lval
                self.n_steps_ += 1
        if not self.diverged_ and not all(np.isfinite(p.data).all() for p in params):
            self.diverged_ = True
        if self.diverged_:
            self.final_train_loss_ = float("nan")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        with np.errstate(all="ignore"):
            return self._forward(Tape(), X).data

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        z = self.decision_function(X)
        return self.classes_[np.argmax(np.nan_to_num(z, nan=-np.inf), axis=1)]

    def score(self, X, y):
        if getattr(self, "diverged_", False):
            return 0.0
        return super().score(X, y)

    def preactivations(self, X):
        """Preactivations of every layer (hidden layers then logits)."""
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        keep = []
        with np.errstate(all="ignore"):
            self._forward(Tape(), X, keep)
        return keep


class ActivationTransformer(TransformerMixin, BaseEstimator):
    """Apply an activation elementwise; stateless apart from validation."""

    def __init__(self, activation="sigmoid_gate(scale_param(x), id(x))", params=None):
        self.activation = activation
        self.params = params

    def fit(self, X, y=None):
        check_array(X, dtype=np.float64)
        self.activation_ = resolve_activation(self.activation)
        return self

    def transform(self, X):
        check_is_fitted(self, "activation_")
        X = check_array(X, dtype=np.float64)
        params = self.params
        if params is None:
            params = self.activation_.default_params()
        with np.errstate(all="ignore"):
            y, _ = self.activation_.forward(X, list(np.asarray(params, dtype=float)))
        return np.broadcast_to(y, X.shape).copy()


# ---------------------------------------------------------------------------
# reward protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChildConfig:
    hidden_widths: tuple = (64, 64)
    steps: int = 1000
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    optimizer: str = "sgd_momentum"
    seed: int = 0
    per_unit_params: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("hidden widths must be >= 1")
        if self.optimizer not in ("sgd_momentum", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def hash(self, dataset_id=""):
        """Digest of everything but the seed (the seed is a separate cache key part)."""
        payload = {k: v for k, v in asdict(self).items() if k != "seed"}
        payload["hidden_widths"] = list(self.hidden_widths)
        payload["dataset"] = dataset_id
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_seed(self, seed):
        return replace(self, seed=seed)


def _finite_or_none(v):
    return v if v is not None and math.isfinite(v) else None


@dataclass(frozen=True)
class RewardRecord:
    expr: str
    val_accuracy: float
    final_train_loss: float
    diverged: bool
    wall_ms: int
    seed: int
    cached: bool = False

    def to_dict(self):
        d = asdict(self)
        d["final_train_loss"] = _finite_or_none(self.final_train_loss)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("final_train_loss") is None:
            d["final_train_loss"] = float("nan")
        return cls(**d)

    def ranking_dict(self):
        """Fields that are a pure function of (expr, data, config, seed)."""
        d = self.to_dict()
        del d["wall_ms"], d["cached"]
        return d


def build_classifier(activation, cfg, **overrides):
    kwargs = dict(
        activation=activation, hidden_widths=cfg.hidden_widths, steps=cfg.steps,
        batch_size=cfg.batch_size, lr=cfg.lr, momentum=cfg.momentum,
        optimizer=cfg.optimizer, per_unit_params=cfg.per_unit_params,
        random_state=cfg.seed,
    )
    kwargs.update(overrides)
    return ActivationMLPClassifier(**kwargs)


def train_child(expr, ds, cfg=ChildConfig(), return_model=False):
    """Train a child MLP with ``expr`` and return its :class:`RewardRecord`."""
    start = time.perf_counter()
    clf = build_classifier(expr, cfg).fit(ds.train_x, ds.train_y)
    acc = 0.0 if clf.diverged_ else float(clf.score(ds.val_x, ds.val_y))
    record = RewardRecord(
        expr=activation_name(expr),
        val_accuracy=acc,
        final_train_loss=clf.final_train_loss_,
        diverged=bool(clf.diverged_),
        wall_ms=int(round(1000 * (time.perf_counter() - start))),
        seed=cfg.seed,
    )
    return (record, clf) if return_model else record


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray = field(default=None)

    def to_csv(self):
        rows = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            rows.append(f"{float(lo)!r},{float(hi)!r},{int(c)}")
        return "\n".join(rows) + "\n"

    def mass_in(self, lo, hi):
        """Fraction of samples in bins that lie entirely inside [lo, hi]."""
        inside = (self.edges[:-1] >= lo) & (self.edges[1:] <= hi)
        return self.counts[inside].sum() / max(self.counts.sum(), 1)


def histogram(values, bins=50, value_range=None):
    counts, edges = np.histogram(np.asarray(values, dtype=float).ravel(), bins=bins,
                                 range=value_range)
    return Histogram(edges, counts)


def export_preactivation_hist(clf, X, layer, bins=50, value_range=None):
    """Histogram of layer ``layer``'s preactivations over ``X``.

    Layers ``0 .. n_hidden-1`` are hidden layers; ``n_hidden`` is the logits.
    """
    pre = clf.preactivations(X)
    if not 0 <= layer < len(pre):
        raise LayerOutOfRange(f"layer {layer} not in [0, {len(pre)})")
    return histogram(pre[layer], bins, value_range)


def export_beta_hist(clf, bins=20, value_range=None):
    """Histogram of every trained Swish beta in ``clf``."""
    check_is_fitted(clf, "coefs_")
    act = clf.activation_
    if not (isinstance(act, BaselineActivation) and act.kind is Baseline.SWISH_TRAINABLE):
        raise NoTrainableBeta(f"{act!r} has no trainable Swish beta")
    betas = np.concatenate([p.data.ravel() for p in clf.act_params_ if p is not None])
    return histogram(betas, bins, value_range)
