import pytest
from hypothesis import given

from lbp.syntax import REAL, Arrow, Neg, Prod, parse, pretty
from lbp.typing import LbpTypeError, TypingContext, infer, infer_open, is_ground, judge
from lbp.validate import church_poly, square_sin, rnn

from conftest import CTX, ground_terms, source_terms


def test_square_sin_is_real():
    assert infer({"x1": REAL, "x2": REAL}, square_sin()) == REAL


def test_numeral():
    assert infer({}, parse("3")) == REAL


def test_linear_pair_is_neg2():
    assert infer({}, parse("lin z. (z, z)")) == Neg(2)


def test_linear_product_rejected():
    with pytest.raises(LbpTypeError, match="both factors"):
        infer({}, parse("lin z. z * z"))


@pytest.mark.parametrize(
    "text, ty",
    [
        ("lin z. 0", Neg(1)),
        ("lin z. (z, 0)", Neg(2)),
        ("lin z. 3 * z", Neg(1)),
        ("lin z. z + z", Neg(1)),
        ("\\f: R -> R. \\x. f (f x)", Arrow(Arrow(REAL, REAL), Arrow(REAL, REAL))),
        ("let (a, b) = (1, 2) in a * b", REAL),
    ],
)
def test_accepted(text, ty):
    assert infer({}, parse(text)) == ty


@pytest.mark.parametrize(
    "text",
    [
        "y",  # unbound
        "lin z. (\\x. x) z",  # linear variable passed to an exponential function
        "lin z. let y = z in y",  # linear variable substituted exponentially
        "lin z. 3",  # linear variable discarded
        "(1, 2) + 3",
        "3 4",
        "sin((1, 2))",
    ],
)
def test_rejected(text):
    with pytest.raises(LbpTypeError):
        infer({}, parse(text))


def test_backpropagator_application():
    ctx = TypingContext({"y": Neg(2)}, "z")
    assert infer(ctx, parse("y z")) == Prod(REAL, REAL)


def test_judgment_records_linear_use():
    assert not judge({"x": REAL}, parse("x")).linear_used
    assert judge(TypingContext({}, "z"), parse("(z, 0)")).linear_used


def test_is_ground():
    assert is_ground(square_sin())
    assert not is_ground(parse("\\x. x"))
    assert not is_ground(parse("(\\x. x) 3"))
    assert not is_ground(parse("(x1, x2)"))


def test_corpus_typechecks():
    assert infer_open(church_poly()) == REAL
    assert infer_open(rnn([0.5, -0.2])) == REAL


@given(ground_terms())
def test_ground_terms_are_real(g):
    assert is_ground(g)
    assert infer_open(g) == REAL


@given(source_terms())
def test_weakening(t):
    ty = infer(CTX, t)
    assert infer({**CTX, "unused": Arrow(REAL, REAL)}, t) == ty


@given(source_terms())
def test_deterministic(t):
    assert infer(CTX, t) == infer(CTX, t) == infer(CTX, parse(pretty(t)))
