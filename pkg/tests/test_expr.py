import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_fk.expr import (
    BinOp, Call, Compare, Coord, EvaluationError, Neg, Num, ParseError, compile_fields, eval_field, is_constant,
    parse_expression, to_text,
)

DIM = 3


def ev(text, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return eval_field(parse_expression(text, len(x)), x)


@pytest.mark.parametrize("text, x, want", [
    ("x1", [0.7, -2.0], 0.7),
    ("1 - x1^2 - x2^2", [0.6, 0.0], 0.64),
    ("exp(-norm(x)^2)", [0.0, 0.0, 0.0], 1.0),
    ("indicator(x1 > 0)", [-1.0], 0.0),
    ("min(1, 2)", [0.0], 1.0),
    ("max(1, 2, -3)", [0.0], 2.0),
    ("2^3^2", [0.0], 512.0),
    ("-2^2", [0.0], -4.0),
    ("norm(3, 4)", [0.0], 5.0),
    ("pi", [0.0], math.pi),
    ("(x1 <= 1) + (x1 != 1)", [1.0], 1.0),
    ("1e-3 * .5e3", [0.0], 0.5),
])
def test_evaluation(text, x, want):
    assert ev(text, x) == pytest.approx(want, rel=1e-15, abs=1e-15)


@pytest.mark.parametrize("text, x", [
    ("x1/x1", [0.0]),
    ("log(x1)", [0.0]),
    ("sqrt(x1)", [-1.0]),
    ("x1^0.5", [-1.0]),
    ("exp(1000)", [0.0]),
])
def test_evaluation_errors(text, x):
    with pytest.raises(EvaluationError):
        ev(text, x)
    # the bytecode signals the same failure with NaN
    prog = compile_fields([parse_expression(text, len(x))])
    assert math.isnan(prog.eval(0, np.array(x, dtype=float)))


@pytest.mark.parametrize("text", ["x3", "1 +", "foo(1)", "sqrt(1, 2)", "min(1)", "x", "(1", "1 2", "x0"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_expression(text, 2)


def test_parse_error_reports_offset():
    with pytest.raises(ParseError) as exc:
        parse_expression("1 + $", 1)
    assert exc.value.offset == 4


def test_is_constant():
    assert is_constant(parse_expression("2 * 3", 2)) == 6.0
    assert is_constant(parse_expression("x1 - x1", 2)) is None
    assert is_constant(parse_expression("1 / 0", 2)) is None


# random expression trees over x1..x3

leaves = st.one_of(
    st.floats(min_value=0, max_value=1e3, allow_nan=False, allow_infinity=False).map(Num),
    st.integers(min_value=0, max_value=DIM - 1).map(Coord),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(st.sampled_from("+-*/^"), children, children).map(lambda t: BinOp(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["<", "<=", ">", ">=", "==", "!="]), children, children).map(
            lambda t: Compare(t[0], t[1], t[2])),
        st.tuples(st.sampled_from(["abs", "sqrt", "exp", "log", "sin", "cos", "indicator"]), children).map(
            lambda t: Call(t[0], (t[1],))),
        st.tuples(st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3)).map(
            lambda t: Call(t[0], tuple(t[1]))),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)
points = st.lists(st.floats(min_value=-3, max_value=3, allow_nan=False), min_size=DIM, max_size=DIM)


@settings(max_examples=100, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    assert parse_expression(to_text(tree), DIM) == tree


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_tree_and_bytecode_agree(tree, x):
    x = np.array(x)
    prog = compile_fields([tree])
    vm = prog.eval(0, x)
    try:
        want = eval_field(tree, x)
    except EvaluationError:
        assert math.isnan(vm)
        return
    assert vm == want or (math.isnan(vm) and math.isnan(want))


@settings(max_examples=50, deadline=None)
@given(trees, points)
def test_evaluation_is_repeatable(tree, x):
    x = np.array(x)
    prog = compile_fields([tree])
    a, b = prog.eval(0, x), prog.eval(0, x)
    assert (a == b) or (math.isnan(a) and math.isnan(b))


def test_eval_many_matches_scalar():
    prog = compile_fields([parse_expression("sin(x1) * x2 + norm(x)", 2), parse_expression("1", 2)])
    pts = np.random.default_rng(0).normal(size=(50, 2))
    many = prog.eval_many(0, pts)
    assert np.array_equal(many, [prog.eval(0, p) for p in pts])
    assert np.all(prog.eval_many(1, pts) == 1.0)
