import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lbp.rewrite import REDUCTIONS, apply, env_at, find_redexes, struct_moves, struct_step
from lbp.semantics import EvalError, LinV, RealV, eval, flatten, sample_value, sem_equal_at, sem_gradient
from lbp.syntax import REAL, numeral_tuple, parse
from lbp.typing import infer
from lbp.validate import church_poly, square_sin

from conftest import CTX, seeds, source_terms


def test_square_sin_value():
    v = eval(square_sin(), {"x1": 5, "x2": 2})
    assert isinstance(v, RealV)
    assert v.value == math.sin(9.0)
    assert abs(v.value - 0.412) < 5e-4


def test_numeral():
    assert eval(parse("3")) == RealV(3.0)


def test_diagonal_linear_map():
    v = eval(parse("lin z. (z, z)"))
    assert isinstance(v, LinV)
    assert flatten(v(2.5)) == [2.5, 2.5]


def test_unbound_name():
    with pytest.raises(EvalError):
        eval(parse("x + 1"))


def test_sem_gradient_square_sin():
    g = sem_gradient(square_sin(), [5.0, 2.0])
    assert g[0] == pytest.approx(-5.467, abs=1e-3)
    assert g[1] == pytest.approx(5.467, abs=1e-3)


def test_sem_gradient_identity():
    assert sem_gradient(parse("x"), [1.7]) == pytest.approx([1.0], rel=1e-9)


def test_sem_gradient_church_poly():
    # (w^2 + w + 1) x has gradient (2wx + x, w^2 + w + 1)
    w, x = 3.0, 2.0
    g = sem_gradient(church_poly(), [w, x])
    assert g == pytest.approx([2 * w * x + x, w * w + w + 1], rel=1e-7)


def _one_move(t, rng):
    redexes = find_redexes(t, REDUCTIONS, CTX)
    moves = struct_moves(t)
    out = []
    if redexes:
        rule, at = rng.choice(redexes)
        out.append(apply(t, rule, at, CTX))
    if moves:
        rule, at, d = rng.choice(moves)
        out.append(struct_step(t, rule, at, d))
    return out


@given(source_terms(), seeds, st.sampled_from([(0.5, -1.5), (2.0, 0.25)]))
def test_soundness_of_steps(t, seed, point):
    rng = random.Random(seed)
    ty = infer(CTX, t)
    env = {"x1": point[0], "x2": point[1]}
    before = eval(t, env)
    for u in _one_move(t, rng):
        assert sem_equal_at(before, eval(u, env), ty, rng, rel=1e-9)


@given(seeds, st.integers(1, 4))
def test_linear_values_are_linear(seed, d):
    rng = random.Random(seed)
    comps = [f"{rng.uniform(-2, 2)!r} * z" for _ in range(d)]
    body = comps[0] if d == 1 else "(" + ", ".join(comps) + ")"
    lin = eval(parse(f"lin z. {body}"))
    a, b, lam = rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)
    parts = [x + y for x, y in zip(flatten(lin(a)), flatten(lin(b)))]
    assert flatten(lin(a + b)) == pytest.approx(parts, rel=1e-9, abs=1e-12)
    assert flatten(lin(lam * a)) == pytest.approx([lam * x for x in flatten(lin(a))], rel=1e-9, abs=1e-12)


@given(seeds)
def test_sampled_backpropagators_are_linear(seed):
    from lbp.syntax import Neg

    rng = random.Random(seed)
    lin = sample_value(Neg(3), rng)
    a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
    lhs = flatten(lin(a + b))
    rhs = [x + y for x, y in zip(flatten(lin(a)), flatten(lin(b)))]
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=4), st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=4))
def test_injective_on_numeral_tuples(a, b):
    if len(a) != len(b):
        return
    same = flatten(eval(numeral_tuple(a))) == flatten(eval(numeral_tuple(b)))
    assert same == (a == b)


def test_env_at_tracks_binders():
    t = parse("\\y. let z = y in z")
    assert env_at(t, (0,), {}) == {"y": REAL}
