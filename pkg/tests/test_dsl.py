import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actsearch.dsl import (
    BINARY_KERNELS,
    EPS,
    RELU,
    SWISH,
    X,
    ActivationExpr,
    BinaryOp,
    CoreUnit,
    UnaryOp,
    erf,
    eval_binary,
    eval_expr,
    eval_unary,
    grad_expr,
    parse_expr,
    swish,
    swish_prime,
)
from actsearch.exceptions import ParamArityMismatch, ParseError
from actsearch.exhaustive import SpaceConfig, count_space, enumerate_space

U, B = UnaryOp, BinaryOp

KINKED_UNARY = {U.ABS, U.RELU_HALF, U.NEG_HALF, U.SQRT, U.LOG_ABS}
BETA_UNARY = {U.SCALE_PARAM, U.SHIFT_PARAM, U.CONST}
BETA_BINARY = {B.GAUSS_SQ, B.GAUSS_ABS, B.MIX}


def fd(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


def close_rel(a, b, tol=1e-4):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def ref_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


# -- op tables ---------------------------------------------------------------

def test_op_inventory():
    assert len(UnaryOp) == 25
    assert len(BinaryOp) == 10
    assert len({u.value for u in UnaryOp} | {b.value for b in BinaryOp}) == 35


@pytest.mark.parametrize("op,x,expected", [
    (U.RELU_HALF, -2.0, 0.0),
    (U.SINC, 0.0, 1.0),
    (U.SIGMOID, 0.0, 0.5),
    (U.NEG_HALF, 3.0, 0.0),
    (U.GAUSS, 0.0, 1.0),
])
def test_eval_unary_examples(op, x, expected):
    assert eval_unary(op, x) == expected


def test_sqrt_is_totalized_over_abs():
    for x in (-4.0, -0.25, 9.0):
        assert eval_unary(U.SQRT, x) == math.sqrt(abs(x))


def test_log_abs_uses_eps():
    assert eval_unary(U.LOG_ABS, 0.0) == math.log(EPS)


@pytest.mark.parametrize("op,x1,x2,beta,expected", [
    (B.GUARDED_DIV, 1.0, 0.0, None, 1e6),
    (B.SIGMOID_GATE, 0.0, 7.0, None, 3.5),
    (B.MIX, 2.0, 4.0, 0.5, 3.0),
    (B.GAUSS_SQ, 1.0, 1.0, 1.0, 1.0),
    (B.SUB, 1.0, 4.0, None, -3.0),
])
def test_eval_binary_examples(op, x1, x2, beta, expected):
    assert eval_binary(op, x1, x2, beta) == pytest.approx(expected, rel=1e-12)


SPECIAL = [1e308, -1e308, 1.0, -1.0, 1e-308, -1e-308, 0.0]


@pytest.mark.parametrize("op", list(UnaryOp))
def test_unary_never_nan_on_extremes(op):
    for x in SPECIAL:
        assert not math.isnan(eval_unary(op, x, 1.0)), (op, x)


@pytest.mark.parametrize("op", list(BinaryOp))
def test_binary_never_nan_on_extremes(op):
    for a in SPECIAL:
        for c in SPECIAL:
            assert not math.isnan(eval_binary(op, a, c, 1.0)), (op, a, c)


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False), st.sampled_from(list(UnaryOp)))
def test_unary_total_on_finite_inputs(x, op):
    assert not math.isnan(eval_unary(op, x, 1.0))


def test_erf_within_documented_bound():
    xs = np.linspace(-6, 6, 20001)
    err = max(abs(float(erf(x)) - math.erf(x)) for x in xs)
    assert err <= 1.5e-7


# -- gradients -----------------------------------------------------------------

def _points(rng, n, kink=False):
    out = []
    while len(out) < n:
        x = rng.uniform(-3, 3)
        if kink and abs(x) <= 1e-3:
            continue
        out.append(x)
    return out


@pytest.mark.parametrize("op", list(UnaryOp))
def test_unary_gradients_match_finite_differences(op):
    rng = np.random.default_rng(list(UnaryOp).index(op))
    expr = ActivationExpr((CoreUnit(op, U.CONST, B.ADD),))
    for x in _points(rng, 64, op in KINKED_UNARY):
        params = [rng.uniform(0.5, 1.5) for _ in range(expr.n_params)]
        dx, dp = grad_expr(expr, x, params)
        assert close_rel(dx, fd(lambda t: eval_expr(expr, t, params), x)), (op, x)
        for k in range(len(params)):
            def f(b, k=k):
                q = list(params)
                q[k] = b
                return eval_expr(expr, x, q)
            assert close_rel(dp[k], fd(f, params[k])), (op, x, k)


@pytest.mark.parametrize("op", list(BinaryOp))
def test_binary_gradients_match_finite_differences(op):
    rng = np.random.default_rng(100 + list(BinaryOp).index(op))
    beta0 = 1.0 if op in BETA_BINARY else None
    checked = 0
    while checked < 64:
        a, c = rng.uniform(-3, 3, size=2)
        if abs(a - c) <= 1e-3 or abs(c + EPS) <= 1e-3:
            continue  # kink of max/min/gauss_abs, pole of guarded_div
        beta = rng.uniform(0.5, 1.5) if beta0 is not None else None
        y = eval_binary(op, a, c, beta)
        da, dc, db = BINARY_KERNELS[op].deriv(np.float64(a), np.float64(c), np.float64(y), beta)
        assert close_rel(float(da), fd(lambda t: eval_binary(op, t, c, beta), a))
        assert close_rel(float(dc), fd(lambda t: eval_binary(op, a, t, beta), c))
        if beta is not None:
            assert close_rel(float(db), fd(lambda t: eval_binary(op, a, c, t), beta))
        checked += 1


def test_swish_expr_values():
    assert eval_expr(SWISH, 0.0, [1.0]) == 0.0
    assert eval_expr(SWISH, 1.0, [1.0]) == pytest.approx(ref_sigmoid(1.0), abs=1e-15)
    assert grad_expr(SWISH, 0.0, [1.0])[0] == 0.5


def test_swish_grad_at_one_matches_finite_difference():
    oracle = fd(lambda t: t * ref_sigmoid(t), 1.0)
    assert grad_expr(SWISH, 1.0, [1.0])[0] == pytest.approx(oracle, abs=1e-9)
    assert grad_expr(SWISH, 1.0, [1.0])[0] == pytest.approx(0.9276705118714867, abs=1e-12)


def test_identity_grad():
    ident = parse_expr("add(id(x), const)")
    for x in (-3.0, 0.0, 2.5):
        assert grad_expr(ident, x)[0] == 1.0


def test_param_arity_is_checked():
    with pytest.raises(ParamArityMismatch):
        eval_expr(SWISH, 1.0, [])
    with pytest.raises(ParamArityMismatch):
        grad_expr(SWISH, 1.0, [1.0, 2.0])


def test_param_slots_follow_beta_ops():
    expr = parse_expr("mix(scale_param(x), const);gauss_sq(shift_param(u0), id(x))")
    assert expr.n_params == 5
    assert [p.init for p in expr.params] == [1.0, 0.0, 0.5, 0.0, 1.0]
    assert len({p.id for p in expr.params}) == expr.n_params
    assert all(math.isfinite(p.init) for p in expr.params)


# -- strings ---------------------------------------------------------------------

def test_relu_string_and_exact_agreement():
    relu = parse_expr("max(id(x), const)")
    assert relu == RELU
    xs = np.random.default_rng(0).normal(scale=100, size=1000)
    y, _ = relu.forward(xs, relu.default_params())
    assert np.array_equal(y, np.maximum(xs, 0.0))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_relu_expr_equals_max(x):
    assert eval_expr(RELU, x) == max(x, 0.0)


def test_parse_error_offset():
    with pytest.raises(ParseError) as info:
        parse_expr("max(id(x)")
    assert info.value.position == 9


@pytest.mark.parametrize("text", ["", "foo(id(x), id(x))", "add(id(u0), id(x))",
                                  "add(id(x), id(x)) junk", "add(id(x) id(x))"])
def test_parse_rejects_malformed(text):
    with pytest.raises(ParseError):
        parse_expr(text)


def test_roundtrip_over_single_unit_space():
    for expr in enumerate_space(SpaceConfig()):
        assert parse_expr(expr.to_string()) == expr
        canon = expr.canonical_string()
        assert parse_expr(canon).canonical_string() == canon


def test_canonical_injective_modulo_commutativity():
    strings = {e.canonical_string() for e in enumerate_space(SpaceConfig())}
    assert len(strings) == count_space(SpaceConfig(dedup=True)) == 4450


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(UnaryOp)), st.sampled_from(list(UnaryOp)),
       st.sampled_from([b for b in BinaryOp]), st.floats(-5, 5))
def test_equal_canonical_strings_evaluate_equal(u1, u2, b, x):
    e1 = ActivationExpr((CoreUnit(u1, u2, b),))
    e2 = ActivationExpr((CoreUnit(u1, u2, b).swapped(),))
    if e1.canonical_string() != e2.canonical_string():
        return
    c1, c2 = e1.canonicalize(), e2.canonicalize()
    p = [0.7 + 0.1 * k for k in range(c1.n_params)]
    assert eval_expr(c1, x, p) == eval_expr(c2, x, p)
    # the raw forms agree too, once each parameter travels with its op
    assert eval_expr(e1, x) == pytest.approx(eval_expr(e2, x), rel=1e-12, abs=1e-300)


def test_multi_unit_roundtrip_and_refs():
    text = "add(id(x), const); mul(tanh(u0), id(x)); max(id(u1), abs(u0))"
    expr = parse_expr(text)
    assert expr.to_string() == text
    assert expr.units[2].in1 == 1 and expr.units[2].in2 == 0
    assert expr.units[0].in1 == X
    x = 0.3
    u0 = x + 0.0
    u1 = math.tanh(u0) * x
    assert eval_expr(expr, x) == pytest.approx(max(u1, abs(u0)), abs=1e-15)


def test_json_roundtrip_keeps_inits():
    expr = ActivationExpr((CoreUnit(U.SCALE_PARAM, U.IDENTITY, B.MIX),), inits=(2.0, 0.25))
    back = ActivationExpr.from_json(expr.to_json())
    assert back == expr
    assert [p.init for p in back.params] == [2.0, 0.25]
    assert json.loads(expr.to_json())["expr"] == "mix(scale_param(x), id(x))"


# -- swish -------------------------------------------------------------------------

def test_swish_beta_zero_is_half_x():
    xs = np.random.default_rng(1).normal(scale=10, size=1000)
    for x in xs:
        assert swish(x, 0.0) == x / 2


def test_swish_large_beta_approaches_relu():
    xs = np.concatenate([np.linspace(-10, -0.1, 5000), np.linspace(0.1, 10, 5000)])
    assert max(abs(swish(x, 1000.0) - max(x, 0.0)) for x in xs) < 1e-3


def test_swish_prime_identity():
    for beta in (0.1, 1.0, 10.0):
        for x in np.linspace(-10, 10, 101):
            f = x * ref_sigmoid(beta * x)
            closed = beta * f + ref_sigmoid(beta * x) * (1 - beta * f)
            assert swish_prime(x, beta) == pytest.approx(closed, abs=1e-12)


def test_swish_bump_monotonic_regions():
    left = [swish(x, 1.0) for x in np.arange(-4.0, -1.3 + 1e-9, 1e-3)]
    right = [swish(x, 1.0) for x in np.arange(-1.2, 6.0, 1e-3)]
    assert all(a > b for a, b in zip(left, left[1:]))
    assert all(a < b for a, b in zip(right, right[1:]))
