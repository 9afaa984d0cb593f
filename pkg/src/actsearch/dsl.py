"""Search space of scalar activation functions built from core units.

A core unit computes ``b(u1(in1), u2(in2))`` where ``u1``/``u2`` are unary
primitives, ``b`` is a binary primitive and each input is either the
preactivation ``x`` or the output of an earlier unit.  An
:class:`ActivationExpr` chains one to four units; the last unit is the output.

Canonical strings use parenthesised prefix form, e.g.::

    sigmoid_gate(scale_param(x), id(x))
    max(id(x), const)
    add(id(x), sin(x)); mul(id(u0), sigmoid(x))

Segments separated by ``;`` define ``u0``, ``u1``, ... in order.  Trainable
parameters are not printed; they live in the expression's :class:`ParamSlot`
table.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import ParamArityMismatch, ParseError

EPS = 1e-6
MAX_UNITS = 4

#: input reference for the layer preactivation; unit outputs are 0, 1, ...
X = -1


class UnaryOp(enum.Enum):
    IDENTITY = "id"
    NEGATE = "neg"
    ABS = "abs"
    SQUARE = "square"
    CUBE = "cube"
    SQRT = "sqrt"
    SCALE_PARAM = "scale_param"
    SHIFT_PARAM = "shift_param"
    LOG_ABS = "log_abs"
    EXP = "exp"
    SIN = "sin"
    COS = "cos"
    SINH = "sinh"
    COSH = "cosh"
    TANH = "tanh"
    ASINH = "asinh"
    ATAN = "atan"
    SINC = "sinc"
    RELU_HALF = "relu_half"
    NEG_HALF = "neg_half"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    GAUSS = "gauss"
    ERF = "erf"
    CONST = "const"


class BinaryOp(enum.Enum):
    ADD = "add"
    MUL = "mul"
    SUB = "sub"
    GUARDED_DIV = "guarded_div"
    MAX = "max"
    MIN = "min"
    SIGMOID_GATE = "sigmoid_gate"
    GAUSS_SQ = "gauss_sq"
    GAUSS_ABS = "gauss_abs"
    MIX = "mix"


# neutral initial value for each beta-bearing op
UNARY_PARAM_INIT = {
    UnaryOp.SCALE_PARAM: 1.0,
    UnaryOp.SHIFT_PARAM: 0.0,
    UnaryOp.CONST: 0.0,
}
BINARY_PARAM_INIT = {
    BinaryOp.GAUSS_SQ: 1.0,
    BinaryOp.GAUSS_ABS: 1.0,
    BinaryOp.MIX: 0.5,
}
COMMUTATIVE = frozenset(
    {BinaryOp.ADD, BinaryOp.MUL, BinaryOp.MAX, BinaryOp.MIN,
     BinaryOp.GAUSS_SQ, BinaryOp.GAUSS_ABS}
)


# ---------------------------------------------------------------------------
# elementwise kernels
#
# Unary kernels: value(x, beta) and deriv(x, y, beta) -> (dy/dx, dy/dbeta).
# Binary kernels: value(a, c, beta) and deriv(a, c, y, beta)
# -> (dy/da, dy/dc, dy/dbeta).  dy/dbeta is None for parameterless ops.
# All kernels are numpy-vectorised and work on 0-d arrays too.
# ---------------------------------------------------------------------------

def sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


# Abramowitz & Stegun 7.1.26, |error| <= 1.5e-7
_ERF_P = 0.3275911
_ERF_A = (0.254829592, -0.284496736, 1.421413741, -1.453152027, 1.061405429)
ERF_MAX_ABS_ERROR = 1.5e-7


def _erf_parts(x):
    ax = np.abs(x)
    t = 1.0 / (1.0 + _ERF_P * ax)
    a1, a2, a3, a4, a5 = _ERF_A
    poly = t * (a1 + t * (a2 + t * (a3 + t * (a4 + t * a5))))
    return ax, t, poly, np.exp(-ax * ax)


def erf(x):
    _, _, poly, g = _erf_parts(x)
    return np.sign(x) * (1.0 - poly * g)


def erf_prime(x):
    # exact derivative of the rational approximation, not of the true erf
    ax, t, poly, g = _erf_parts(x)
    a1, a2, a3, a4, a5 = _ERF_A
    dpoly_dt = a1 + t * (2 * a2 + t * (3 * a3 + t * (4 * a4 + t * 5 * a5)))
    return g * (dpoly_dt * _ERF_P * t * t + 2.0 * ax * poly)


def _sinc(x, beta):
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 1.0, np.sin(x) / safe)


def _sinc_prime(x, y, beta):
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    direct = (x * np.cos(x) - np.sin(x)) / (safe * safe)
    series = -x / 3.0 + x ** 3 / 30.0
    return np.where(small, series, direct), None


def _sqrt_prime(x, y, beta):
    safe = np.where(y == 0, 1.0, y)
    return np.where(y == 0, 0.0, np.sign(x) * 0.5 / safe), None


class _Kernel(NamedTuple):
    value: object
    deriv: object


UNARY_KERNELS = {
    UnaryOp.IDENTITY: _Kernel(lambda x, b: x, lambda x, y, b: (1.0, None)),
    UnaryOp.NEGATE: _Kernel(lambda x, b: -x, lambda x, y, b: (-1.0, None)),
    UnaryOp.ABS: _Kernel(lambda x, b: np.abs(x), lambda x, y, b: (np.sign(x), None)),
    UnaryOp.SQUARE: _Kernel(lambda x, b: x * x, lambda x, y, b: (2.0 * x, None)),
    UnaryOp.CUBE: _Kernel(lambda x, b: x * x * x, lambda x, y, b: (3.0 * x * x, None)),
    UnaryOp.SQRT: _Kernel(lambda x, b: np.sqrt(np.abs(x)), _sqrt_prime),
    UnaryOp.SCALE_PARAM: _Kernel(lambda x, b: b * x, lambda x, y, b: (b, x)),
    UnaryOp.SHIFT_PARAM: _Kernel(lambda x, b: x + b, lambda x, y, b: (1.0, 1.0)),
    UnaryOp.LOG_ABS: _Kernel(
        lambda x, b: np.log(np.abs(x) + EPS),
        lambda x, y, b: (np.sign(x) / (np.abs(x) + EPS), None),
    ),
    UnaryOp.EXP: _Kernel(lambda x, b: np.exp(x), lambda x, y, b: (y, None)),
    UnaryOp.SIN: _Kernel(lambda x, b: np.sin(x), lambda x, y, b: (np.cos(x), None)),
    UnaryOp.COS: _Kernel(lambda x, b: np.cos(x), lambda x, y, b: (-np.sin(x), None)),
    UnaryOp.SINH: _Kernel(lambda x, b: np.sinh(x), lambda x, y, b: (np.cosh(x), None)),
    UnaryOp.COSH: _Kernel(lambda x, b: np.cosh(x), lambda x, y, b: (np.sinh(x), None)),
    UnaryOp.TANH: _Kernel(lambda x, b: np.tanh(x), lambda x, y, b: (1.0 - y * y, None)),
    UnaryOp.ASINH: _Kernel(
        lambda x, b: np.arcsinh(x), lambda x, y, b: (1.0 / np.hypot(1.0, x), None)
    ),
    UnaryOp.ATAN: _Kernel(
        lambda x, b: np.arctan(x), lambda x, y, b: (1.0 / (1.0 + x * x), None)
    ),
    UnaryOp.SINC: _Kernel(_sinc, _sinc_prime),
    UnaryOp.RELU_HALF: _Kernel(
        lambda x, b: np.maximum(x, 0.0), lambda x, y, b: ((x > 0).astype(float), None)
    ),
    UnaryOp.NEG_HALF: _Kernel(
        lambda x, b: np.minimum(x, 0.0), lambda x, y, b: ((x < 0).astype(float), None)
    ),
    UnaryOp.SIGMOID: _Kernel(lambda x, b: sigmoid(x), lambda x, y, b: (y * (1.0 - y), None)),
    UnaryOp.SOFTPLUS: _Kernel(lambda x, b: softplus(x), lambda x, y, b: (sigmoid(x), None)),
    UnaryOp.GAUSS: _Kernel(
        lambda x, b: np.exp(-x * x), lambda x, y, b: (-2.0 * x * y, None)
    ),
    UnaryOp.ERF: _Kernel(lambda x, b: erf(x), lambda x, y, b: (erf_prime(x), None)),
    UnaryOp.CONST: _Kernel(
        lambda x, b: np.broadcast_to(b, np.shape(x)), lambda x, y, b: (0.0, 1.0)
    ),
}


def _guarded_denominator(c):
    d = c + EPS
    return np.where(d == 0, EPS, d)


def _div_prime(a, c, y, b):
    d = _guarded_denominator(c)
    return 1.0 / d, -y / d, None


def _max_prime(a, c, y, b):
    # ties route the gradient to the second operand: max(x, 0)' = 0 at 0
    first = (a > c).astype(float)
    return first, 1.0 - first, None


def _min_prime(a, c, y, b):
    first = (a < c).astype(float)
    return first, 1.0 - first, None


def _gate_prime(a, c, y, b):
    s = sigmoid(a)
    return s * (1.0 - s) * c, s, None


def _gauss_sq(a, c, b):
    d = a - c
    return np.exp(-b * (d * d))


def _gauss_sq_prime(a, c, y, b):
    d = a - c
    da = -2.0 * b * d * y
    return da, -da, -(d * d) * y


def _gauss_abs(a, c, b):
    return np.exp(-b * np.abs(a - c))


def _gauss_abs_prime(a, c, y, b):
    d = a - c
    da = -b * np.sign(d) * y
    return da, -da, -np.abs(d) * y


BINARY_KERNELS = {
    BinaryOp.ADD: _Kernel(lambda a, c, b: a + c, lambda a, c, y, b: (1.0, 1.0, None)),
    BinaryOp.MUL: _Kernel(lambda a, c, b: a * c, lambda a, c, y, b: (c, a, None)),
    BinaryOp.SUB: _Kernel(lambda a, c, b: a - c, lambda a, c, y, b: (1.0, -1.0, None)),
    BinaryOp.GUARDED_DIV: _Kernel(lambda a, c, b: a / _guarded_denominator(c), _div_prime),
    BinaryOp.MAX: _Kernel(lambda a, c, b: np.maximum(a, c), _max_prime),
    BinaryOp.MIN: _Kernel(lambda a, c, b: np.minimum(a, c), _min_prime),
    BinaryOp.SIGMOID_GATE: _Kernel(lambda a, c, b: sigmoid(a) * c, _gate_prime),
    BinaryOp.GAUSS_SQ: _Kernel(_gauss_sq, _gauss_sq_prime),
    BinaryOp.GAUSS_ABS: _Kernel(_gauss_abs, _gauss_abs_prime),
    BinaryOp.MIX: _Kernel(
        lambda a, c, b: b * a + (1.0 - b) * c,
        lambda a, c, y, b: (b, 1.0 - b, a - c),
    ),
}


def eval_unary(op, x, beta=None):
    """Scalar value of a unary primitive; ``beta`` defaults to the op's init."""
    if beta is None:
        beta = UNARY_PARAM_INIT.get(op, 0.0)
    with np.errstate(all="ignore"):
        return float(UNARY_KERNELS[op].value(np.float64(x), np.float64(beta)))


def eval_binary(op, x1, x2, beta=None):
    if beta is None:
        beta = BINARY_PARAM_INIT.get(op, 0.0)
    with np.errstate(all="ignore"):
        return float(
            BINARY_KERNELS[op].value(np.float64(x1), np.float64(x2), np.float64(beta))
        )


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoreUnit:
    u1: UnaryOp
    u2: UnaryOp
    b: BinaryOp
    in1: int = X
    in2: int = X

    def swapped(self):
        return CoreUnit(self.u2, self.u1, self.b, self.in2, self.in1)


@dataclass(frozen=True)
class ParamSlot:
    id: int
    init: float
    owner: tuple  # (unit index, position) with position 0=u1, 1=u2, 2=binary
    shared_per_channel: bool = True


def _ref_name(ref):
    return "x" if ref == X else f"u{ref}"


def operand_string(u, ref):
    if u is UnaryOp.CONST:
        return "const"
    return f"{u.value}({_ref_name(ref)})"


@dataclass(frozen=True)
class ActivationExpr:
    """A chain of core units denoting a scalar function of ``x``.

    ``inits`` optionally overrides the default initial values of the
    parameter slots (in slot order).
    """

    units: tuple
    inits: tuple = None
    params: tuple = field(init=False, compare=False, repr=False)
    _slots: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        units = tuple(self.units)
        if not 1 <= len(units) <= MAX_UNITS:
            raise ValueError(f"an expression has 1 to {MAX_UNITS} units, got {len(units)}")
        for i, unit in enumerate(units):
            for ref in (unit.in1, unit.in2):
                if not X <= ref < i:
                    raise ValueError(f"unit {i} cannot reference {_ref_name(ref)}")
        object.__setattr__(self, "units", units)

        slots, index = [], []
        for i, unit in enumerate(units):
            owned = []
            for pos, init in (
                (0, UNARY_PARAM_INIT.get(unit.u1)),
                (1, UNARY_PARAM_INIT.get(unit.u2)),
                (2, BINARY_PARAM_INIT.get(unit.b)),
            ):
                if init is None:
                    owned.append(None)
                    continue
                owned.append(len(slots))
                slots.append(ParamSlot(len(slots), init, (i, pos)))
            index.append(tuple(owned))
        if self.inits is not None:
            inits = tuple(float(v) for v in self.inits)
            if len(inits) != len(slots):
                raise ParamArityMismatch(len(slots), len(inits))
            if not all(math.isfinite(v) for v in inits):
                raise ValueError("parameter inits must be finite")
            object.__setattr__(self, "inits", inits)
            slots = [ParamSlot(s.id, v, s.owner) for s, v in zip(slots, inits)]
        object.__setattr__(self, "params", tuple(slots))
        object.__setattr__(self, "_slots", tuple(index))

    # -- introspection -----------------------------------------------------

    @property
    def output(self):
        return len(self.units) - 1

    @property
    def n_params(self):
        return len(self.params)

    def default_params(self):
        return np.array([p.init for p in self.params], dtype=float)

    def __str__(self):
        return self.to_string()

    def to_string(self):
        """Print the expression exactly as structured (no operand sorting)."""
        return "; ".join(
            f"{u.b.value}({operand_string(u.u1, u.in1)}, {operand_string(u.u2, u.in2)})"
            for u in self.units
        )

    def canonicalize(self):
        """Sort the operands of commutative binaries; parameters follow their op."""
        units, perm = [], []
        for i, unit in enumerate(self.units):
            s1 = operand_string(unit.u1, unit.in1)
            s2 = operand_string(unit.u2, unit.in2)
            owned = self._slots[i]
            if unit.b in COMMUTATIVE and s2 < s1:
                unit = unit.swapped()
                owned = (owned[1], owned[0], owned[2])
            units.append(unit)
            perm.extend(j for j in owned if j is not None)
        inits = None
        if self.inits is not None:
            inits = tuple(self.inits[j] for j in perm)
        return ActivationExpr(tuple(units), inits)

    def canonical_string(self):
        return self.canonicalize().to_string()

    # -- evaluation ----------------------------------------------------------

    def _check_params(self, params):
        if params is None:
            return self.default_params()
        if len(params) != len(self.params):
            raise ParamArityMismatch(len(self.params), len(params))
        return params

    def forward(self, x, params=None):
        """Vectorised evaluation.

        ``params[k]`` may be a scalar or an array broadcastable against ``x``
        (e.g. one value per column for per-channel parameters).  Returns
        ``(y, cache)``; pass ``cache`` to :meth:`backward`.
        """
        params = self._check_params(params)
        outputs, cache = [], []
        for unit, (k1, k2, kb) in zip(self.units, self._slots):
            x1 = x if unit.in1 == X else outputs[unit.in1]
            x2 = x if unit.in2 == X else outputs[unit.in2]
            b1 = params[k1] if k1 is not None else None
            b2 = params[k2] if k2 is not None else None
            bb = params[kb] if kb is not None else None
            a = UNARY_KERNELS[unit.u1].value(x1, b1)
            c = UNARY_KERNELS[unit.u2].value(x2, b2)
            y = BINARY_KERNELS[unit.b].value(a, c, bb)
            outputs.append(y)
            cache.append((x1, x2, a, c, y, b1, b2, bb))
        return outputs[-1], cache

    def backward(self, grad, cache):
        """Reverse pass through the unit chain.

        Returns ``(dx, dparams)`` where ``dparams[k]`` is the elementwise
        (unreduced) adjoint of parameter ``k``, or ``None`` if it received
        no gradient.  Callers sum over whatever axes a parameter is shared.
        """
        n = len(self.units)
        adj = [None] * n
        adj[-1] = grad
        dx = None
        dparams = [None] * len(self.params)

        def acc(target, value):
            return value if target is None else target + value

        for i in range(n - 1, -1, -1):
            g = adj[i]
            if g is None:
                continue
            unit = self.units[i]
            k1, k2, kb = self._slots[i]
            x1, x2, a, c, y, b1, b2, bb = cache[i]
            da, dc, dbb = BINARY_KERNELS[unit.b].deriv(a, c, y, bb)
            ga, gc = g * da, g * dc
            if kb is not None:
                dparams[kb] = acc(dparams[kb], g * dbb)
            for u, ref, xin, out, beta, k, gout in (
                (unit.u1, unit.in1, x1, a, b1, k1, ga),
                (unit.u2, unit.in2, x2, c, b2, k2, gc),
            ):
                d_in, d_beta = UNARY_KERNELS[u].deriv(xin, out, beta)
                if k is not None:
                    dparams[k] = acc(dparams[k], gout * d_beta)
                if u is UnaryOp.CONST:
                    continue
                if ref == X:
                    dx = acc(dx, gout * d_in)
                else:
                    adj[ref] = acc(adj[ref], gout * d_in)
        if dx is None:
            dx = np.zeros_like(np.asarray(grad, dtype=float))
        return dx, dparams

    # -- persistence --------------------------------------------------------

    def to_dict(self):
        return {
            "expr": self.to_string(),
            "params": [
                {"id": p.id, "init": p.init, "owner": list(p.owner),
                 "shared_per_channel": p.shared_per_channel}
                for p in self.params
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        expr = parse_expr(data["expr"])
        slots = sorted(data.get("params", []), key=lambda p: p["id"])
        if not slots:
            return expr
        return cls(expr.units, tuple(p["init"] for p in slots))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def eval_expr(expr, x, params=None):
    """Scalar value of ``expr`` at ``x``."""
    with np.errstate(all="ignore"):
        y, _ = expr.forward(np.float64(x), _as_float_params(expr, params))
    return float(y)


def grad_expr(expr, x, params=None):
    """Reverse-mode ``(df/dx, [df/dparam_k])`` at a scalar point."""
    params = _as_float_params(expr, params)
    with np.errstate(all="ignore"):
        y, cache = expr.forward(np.float64(x), params)
        dx, dp = expr.backward(np.float64(1.0), cache)
    return float(dx), [0.0 if g is None else float(g) for g in dp]


def _as_float_params(expr, params):
    if params is None:
        return expr.default_params()
    if len(params) != expr.n_params:
        raise ParamArityMismatch(expr.n_params, len(params))
    return [np.float64(p) for p in params]


# ---------------------------------------------------------------------------
# canonical string parser
# ---------------------------------------------------------------------------

_UNARY_BY_NAME = {op.value: op for op in UnaryOp}
_BINARY_BY_NAME = {op.value: op for op in BinaryOp}


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, message, pos=None):
        raise ParseError(message, self.pos if pos is None else pos, self.text)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch):
        self.skip_ws()
        if self.pos >= len(self.text):
            self.error(f"expected {ch!r} but input ended")
        if self.text[self.pos] != ch:
            self.error(f"expected {ch!r}, found {self.text[self.pos]!r}")
        self.pos += 1

    def name(self):
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] == "_"
        ):
            self.pos += 1
        if start == self.pos:
            if self.pos >= len(self.text):
                self.error("expected a name but input ended")
            self.error(f"expected a name, found {self.text[self.pos]!r}")
        return self.text[start:self.pos], start

    def ref(self, unit_index):
        word, start = self.name()
        if word == "x":
            return X
        if word[0] == "u" and word[1:].isdigit():
            ref = int(word[1:])
            if ref < unit_index:
                return ref
            self.error(f"unit {unit_index} cannot reference {word}", start)
        self.error(f"unknown input {word!r}", start)

    def operand(self, unit_index):
        word, start = self.name()
        op = _UNARY_BY_NAME.get(word)
        if op is None:
            self.error(f"unknown unary function {word!r}", start)
        if op is UnaryOp.CONST:
            return op, X
        self.expect("(")
        ref = self.ref(unit_index)
        self.expect(")")
        return op, ref

    def unit(self, unit_index):
        word, start = self.name()
        b = _BINARY_BY_NAME.get(word)
        if b is None:
            self.error(f"unknown binary function {word!r}", start)
        self.expect("(")
        u1, in1 = self.operand(unit_index)
        self.expect(",")
        u2, in2 = self.operand(unit_index)
        self.expect(")")
        return CoreUnit(u1, u2, b, in1, in2)

    def parse(self):
        units = [self.unit(0)]
        while True:
            self.skip_ws()
            if self.pos >= len(self.text):
                break
            if self.text[self.pos] != ";":
                self.error(f"expected ';' or end of input, found {self.text[self.pos]!r}")
            self.pos += 1
            if len(units) == MAX_UNITS:
                self.error(f"more than {MAX_UNITS} units")
            units.append(self.unit(len(units)))
        return ActivationExpr(tuple(units))


def parse_expr(text):
    """Parse a canonical string; raises :class:`ParseError` with an offset."""
    return _Parser(text).parse()


def canonical_string(expr):
    return expr.canonical_string()


# ---------------------------------------------------------------------------
# reference expressions and closed forms
# ---------------------------------------------------------------------------

SWISH = ActivationExpr((CoreUnit(UnaryOp.SCALE_PARAM, UnaryOp.IDENTITY, BinaryOp.SIGMOID_GATE),))
RELU = ActivationExpr((CoreUnit(UnaryOp.IDENTITY, UnaryOp.CONST, BinaryOp.MAX),))
IDENTITY = ActivationExpr((CoreUnit(UnaryOp.IDENTITY, UnaryOp.CONST, BinaryOp.ADD),))


def swish(x, beta=1.0):
    """``x * sigmoid(beta * x)``; works on scalars and arrays."""
    with np.errstate(all="ignore"):
        out = x * sigmoid(beta * np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def swish_prime(x, beta=1.0):
    with np.errstate(all="ignore"):
        x = np.asarray(x, dtype=float)
        s = sigmoid(beta * x)
        f = x * s
        out = beta * f + s * (1.0 - beta * f)
    return float(out) if np.ndim(out) == 0 else out
