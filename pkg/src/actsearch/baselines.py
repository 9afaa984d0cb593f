"""Hand-designed activations used as benchmark baselines.

Every activation object (these and :class:`~actsearch.dsl.ActivationExpr`)
exposes ``n_params``, ``default_params()``, ``forward(x, params)`` and
``backward(grad, cache)``, which is all :meth:`Tape.apply_activation` needs.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .dsl import erf, erf_prime, sigmoid, softplus

LRELU_ALPHA = 0.01
PRELU_INIT = 0.25
ELU_ALPHA = 1.0
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805
SWISH_BETA_INIT = 1.0

_SQRT2 = math.sqrt(2.0)


class Baseline(enum.Enum):
    RELU = "relu"
    LRELU = "lrelu"
    PRELU = "prelu"
    SOFTPLUS = "softplus"
    ELU = "elu"
    SELU = "selu"
    GELU = "gelu"
    SWISH1 = "swish1"
    SWISH_TRAINABLE = "swish"


def gauss_cdf(x):
    return 0.5 * (1.0 + erf(x / _SQRT2))


def _elu(x, alpha):
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    return np.where(x >= 0, x, neg), np.where(x >= 0, 1.0, neg + alpha)


def _value_and_slope(kind, x, param=None):
    if kind is Baseline.RELU:
        return np.maximum(x, 0.0), (x > 0).astype(float)
    if kind in (Baseline.LRELU, Baseline.PRELU):
        alpha = LRELU_ALPHA if kind is Baseline.LRELU else param
        return np.where(x >= 0, x, alpha * x), np.where(x >= 0, 1.0, alpha)
    if kind is Baseline.SOFTPLUS:
        return softplus(x), sigmoid(x)
    if kind is Baseline.ELU:
        return _elu(x, ELU_ALPHA)
    if kind is Baseline.SELU:
        y, d = _elu(x, SELU_ALPHA)
        return SELU_LAMBDA * y, SELU_LAMBDA * d
    if kind is Baseline.GELU:
        cdf = gauss_cdf(x)
        return x * cdf, cdf + x * 0.5 * erf_prime(x / _SQRT2) / _SQRT2
    beta = 1.0 if kind is Baseline.SWISH1 else param
    s = sigmoid(beta * x)
    f = x * s
    return f, beta * f + s * (1.0 - beta * f)


class BaselineActivation:
    """One of the benchmark baselines in the activation protocol."""

    def __init__(self, kind):
        self.kind = Baseline(kind)

    def __repr__(self):
        return f"BaselineActivation({self.kind.value!r})"

    def __eq__(self, other):
        return isinstance(other, BaselineActivation) and other.kind is self.kind

    def __hash__(self):
        return hash(self.kind)

    @property
    def name(self):
        return self.kind.value

    @property
    def n_params(self):
        return 1 if self.kind in (Baseline.PRELU, Baseline.SWISH_TRAINABLE) else 0

    def default_params(self):
        if self.kind is Baseline.PRELU:
            return np.array([PRELU_INIT])
        if self.kind is Baseline.SWISH_TRAINABLE:
            return np.array([SWISH_BETA_INIT])
        return np.zeros(0)

    def forward(self, x, params=()):
        param = params[0] if len(params) else None
        y, slope = _value_and_slope(self.kind, x, param)
        return y, (x, slope, param)

    def backward(self, grad, cache):
        x, slope, param = cache
        if self.kind is Baseline.PRELU:
            return grad * slope, [grad * np.where(x >= 0, 0.0, x)]
        if self.kind is Baseline.SWISH_TRAINABLE:
            s = sigmoid(param * x)
            return grad * slope, [grad * x * x * s * (1.0 - s)]
        return grad * slope, []


def eval_baseline(kind, x, param=None):
    """``(f(x), f'(x))`` for a baseline; trainable ones use their init by default."""
    act = BaselineActivation(kind)
    if param is None and act.n_params:
        param = act.default_params()[0]
    with np.errstate(all="ignore"):
        y, slope = _value_and_slope(act.kind, np.asarray(x, dtype=float), param)
    if np.ndim(y) == 0:
        return float(y), float(slope)
    return y, slope
