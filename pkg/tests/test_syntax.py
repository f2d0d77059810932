import pytest
from hypothesis import given

from lbp.syntax import (
    REAL,
    Ann,
    App,
    Arrow,
    ESub,
    FunApp,
    Lam,
    Mult,
    Neg,
    Num,
    Pair,
    ParseError,
    Prod,
    Sum,
    Var,
    alpha_eq,
    euclid,
    free_vars,
    fv,
    input_order,
    numeral_tuple,
    occurrences,
    parse,
    parse_type,
    pretty,
    size,
    subst_meta,
)
from lbp.typing import LbpTypeError, infer_open
from lbp.validate import square_sin

from conftest import source_terms

SQUARE_SIN = "let z1 = sub(x1, x2) in let z2 = z1 * z1 in sin(z2)"


def test_parse_square_sin_shape():
    t = parse(SQUARE_SIN)
    assert isinstance(t, ESub) and t.var == "z1"
    assert isinstance(t.bound, FunApp) and t.bound.sym == "sub"
    inner = t.body
    assert isinstance(inner, ESub) and isinstance(inner.bound, Mult)
    assert isinstance(inner.body, FunApp) and inner.body.sym == "sin"


def test_parse_variable():
    t = parse("x")
    assert isinstance(t, Var) and t.name == "x" and t.ann is Ann.EXP


@pytest.mark.parametrize("text", ["(t", "let x = in y", "\\x. ", "x +", "sin(x, y)", "sin"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse(text)


def test_parse_error_has_position():
    with pytest.raises(ParseError, match="line 1, column 3"):
        parse("(t")


def test_application_is_left_associative():
    t = parse("f x y")
    assert pretty(t) == "f x y"
    assert alpha_eq(t, App(App(Var("f"), Var("x")), Var("y")))


def test_unregistered_call_is_an_application():
    t = parse("nosuch(x)")
    assert isinstance(t, App)
    with pytest.raises(LbpTypeError):
        infer_open(t)


def test_compound_function_arguments_desugar_to_lets():
    t = parse("sin(x * y)")
    assert isinstance(t, ESub)
    assert isinstance(t.body, FunApp) and isinstance(t.body.args[0], Var)


def test_tuples_right_nest():
    assert alpha_eq(parse("(1, 2, 3)"), Pair(Num(1.0), Pair(Num(2.0), Num(3.0))))
    assert alpha_eq(numeral_tuple([1, 2, 3]), parse("(1, 2, 3)"))


def test_types():
    assert parse_type("R * R -> R") == Arrow(Prod(REAL, REAL), REAL)
    assert parse_type("R -> R -> R") == Arrow(REAL, Arrow(REAL, REAL))
    assert parse_type("Neg(3)") == Neg(3)
    assert euclid(1) == REAL and euclid(3) == Prod(REAL, Prod(REAL, REAL))
    with pytest.raises(ValueError):
        Neg(0)


def test_scientific_literals():
    assert parse("1.5e-3").value == 0.0015


def test_pretty_numeral():
    assert pretty(Num(3.0)) == "3"


def test_pretty_square_sin_round_trips():
    t = parse(SQUARE_SIN)
    assert pretty(t) == SQUARE_SIN
    assert alpha_eq(parse(pretty(t)), t)


def test_let_chain_prints_one_let_per_binding():
    text = pretty(parse("let a = 1 in let b = a in let c = b in c"))
    assert text.count("let") == 3


def test_free_vars():
    assert fv(square_sin()) == {"x1", "x2"}
    assert free_vars(square_sin()) == {("x1", Ann.EXP), ("x2", Ann.EXP)}
    assert fv(parse("\\x. x")) == frozenset()
    t = parse("let x = u in t")
    assert fv(t) == {"t", "u"}


def test_linear_free_vars_carry_their_annotation():
    t = parse("lin a. y a")
    assert free_vars(t) == {("y", Ann.EXP)}
    assert free_vars(parse("let lin a = 2 in y a")) == {("y", Ann.EXP)}


def test_size():
    assert size(Var("x")) == 1
    assert size(Sum(Var("x"), Var("y"))) == 3
    # ESub 1, sub(x1, x2) 3, ESub 1, z1 * z1 3, sin(z2) 2
    assert size(square_sin()) == 10


def test_alpha_eq():
    assert alpha_eq(parse("\\x. x"), parse("\\y. y"))
    assert not alpha_eq(parse("\\x. \\y. x"), parse("\\y. \\x. x"))
    renamed = parse("let w = sub(x1, x2) in let z2 = w * w in sin(z2)")
    assert alpha_eq(square_sin(), renamed)
    assert not alpha_eq(square_sin(), parse("let w = sub(x2, x1) in let z2 = w * w in sin(z2)"))


def test_subst_meta():
    assert alpha_eq(subst_meta(Var("x"), "x", Num(2.0)), Num(2.0))
    out = subst_meta(parse("\\y. x"), "x", Var("y"))
    assert isinstance(out, Lam) and out.var != "y"
    assert out.body.name == "y"


def test_input_order_is_first_occurrence():
    assert input_order(parse("x2 + x1 * x2")) == ["x2", "x1"]


@given(source_terms())
def test_round_trip(t):
    assert alpha_eq(parse(pretty(t)), t)


@given(source_terms(), source_terms(), source_terms())
def test_alpha_eq_is_an_equivalence(a, b, c):
    assert alpha_eq(a, a)
    assert alpha_eq(a, b) == alpha_eq(b, a)
    if alpha_eq(a, b) and alpha_eq(b, c):
        assert alpha_eq(a, c)


@given(source_terms(), source_terms(ty=REAL))
def test_alpha_eq_survives_renaming(t, _):
    assert alpha_eq(t, parse(pretty(t).replace("%", "_r")))


@given(source_terms(), source_terms(ty=REAL))
def test_substitution_bounds(t, v):
    out = subst_meta(t, "x1", v)
    assert size(out) <= size(t) + occurrences(t, "x1") * size(v)
    assert fv(out) <= (fv(t) - {"x1"}) | fv(v)
