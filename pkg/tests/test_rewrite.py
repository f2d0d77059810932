import random

import pytest
from hypothesis import given

from lbp.rewrite import (
    BETA,
    DEFAULT_RULES,
    ETA,
    REDUCTIONS,
    SHRINKING,
    STRATEGIES,
    FuelExhausted,
    RewriteError,
    RuleId,
    apply,
    canonical,
    equivalent,
    find_redexes,
    is_normal,
    normalize,
    parse_rules,
    reduce_to_graph,
    replay,
    struct_moves,
    struct_step,
)
from lbp.syntax import REAL, FunApp, Neg, Num, alpha_eq, is_value, parse, parse_type, size
from lbp.typing import infer, is_ground
from lbp.validate import (
    check_bisimulation,
    check_postponement,
    check_shrinking_bound,
    check_strategy_independence,
    check_subject_reduction,
    check_normal_forms_are_values,
    church_poly,
    close,
    square_sin,
)

from conftest import CTX, closed_terms, seeds, source_terms

R = RuleId
NEG_CTX = {"x": Neg(1)}


def test_rule_ids():
    assert {r.value for r in RuleId} == {f"R{i}" for i in range(18, 35)} | {"R20n"}
    assert parse_rules("beta") == BETA
    assert parse_rules("beta,R28") == BETA | {R.R28}
    with pytest.raises(ValueError):
        parse_rules("R99")


def test_beta_redex_through_a_context():
    t = parse("(let y = 3 in \\x. x) 5")
    assert find_redexes(t, {R.R18}) == [(R.R18, ())]


def test_value_has_no_redex():
    for text in ["\\x. x + 1", "(1, 2)", "3", "x"]:
        assert find_redexes(parse(text), REDUCTIONS - ETA) == []


def test_linear_factoring_redex():
    t = parse("(x 2) + (x 3)")
    assert find_redexes(t, {R.R28}, NEG_CTX) == [(R.R28, ())]
    assert alpha_eq(apply(t, R.R28, (), NEG_CTX), parse("x (2 + 3)"))


def test_beta_step():
    assert alpha_eq(apply(parse("(\\x. x + 1) u"), R.R18, ()), parse("let x = u in x + 1"))


def test_garbage_collection():
    assert alpha_eq(apply(parse("let x = \\y. y in t"), R.R21, ()), parse("t"))


def test_micro_step_substitution_replaces_one_occurrence():
    t = parse("let x = 2 in x + x")
    (rule, at), _ = find_redexes(t, {R.R20n})
    assert rule is R.R20n
    assert alpha_eq(apply(t, rule, at), parse("let x = 2 in 2 + x"))


def test_numeric_rules():
    assert alpha_eq(apply(parse("(let a = 1 in 2) + 3"), R.R23, ()), parse("let a = 1 in 5"))
    assert alpha_eq(apply(parse("2 * 3"), R.R25, ()), parse("6"))
    assert alpha_eq(apply(parse("(1, 2) + (3, 4)"), R.R24, ()), parse("(1 + 3, 2 + 4)"))
    assert alpha_eq(apply(FunApp("sin", [Num(0.0)]), R.R34, ()), parse("0"))


def test_pair_and_linear_substitution():
    t = apply(parse("let (a, b) = (1, u) in a + b"), R.R19, ())
    assert alpha_eq(t, parse("let b = u in let a = 1 in a + b"))
    assert alpha_eq(apply(parse("let lin a = 2 in y a"), R.R22, (), {"y": Neg(1)}), parse("y 2"))


def test_eta_rules():
    t = apply(parse("f"), R.R26, (), {"f": parse_type("R -> R")})
    assert alpha_eq(t, parse("\\y. f y"))
    u = apply(parse("let p : R * R = (1, 2) in p"), R.R27, ())
    assert alpha_eq(u, parse("let (a, b) = (1, 2) in let p : R * R = (a, b) in p"))


def test_side_condition_failure():
    with pytest.raises(RewriteError):
        apply(parse("let x = y + 1 in t"), R.R21, ())
    with pytest.raises(RewriteError):
        apply(parse("(1, 2)"), R.R18, ())


def test_normalize_square_sin():
    t = close(square_sin(), [5.0, 2.0])
    nf, trace = normalize(t, DEFAULT_RULES, "eager_factoring")
    assert nf.value == pytest.approx(0.4121, abs=1e-4)
    assert trace.total <= 2 * size(t)
    assert alpha_eq(replay(t, trace.steps), nf)


def test_normalize_value_is_identity():
    t = parse("\\x. x")
    nf, trace = normalize(t)
    assert nf is t and trace.total == 0


def test_eager_factoring_example():
    nf, trace = normalize(parse("(x 2) + (x 3)"), REDUCTIONS - ETA, "eager_factoring", ctx=NEG_CTX)
    assert alpha_eq(nf, parse("x 5"))
    assert [r for r, _ in trace.steps] == [R.R28, R.R23]


def test_fuel():
    with pytest.raises(FuelExhausted) as info:
        normalize(parse("(\\x. x) 1 + 2"), DEFAULT_RULES, "leftmost_outermost", fuel=1)
    assert info.value.trace.total == 1
    assert info.value.trace.final is not None


def test_step_classes():
    _, trace = normalize(close(square_sin(), [5.0, 2.0]), DEFAULT_RULES, "eager_factoring")
    assert trace.by_class() == {"beta": 10, "eta": 0, "ell": 0, "fn": 2, "structural": 0}


def test_reduce_to_graph():
    g, trace = reduce_to_graph(church_poly())
    assert is_ground(g)
    assert trace.total > 0
    assert infer(CTX | {"w": REAL, "x": REAL}, g) == REAL


def test_structural_moves():
    t = parse("let x = u in let y = w in t")
    assert alpha_eq(struct_step(t, R.R29, (), "fwd"), parse("let y = w in let x = u in t"))
    assert alpha_eq(struct_step(parse("let x = u in s + t"), R.R32, (), "fwd"), parse("(let x = u in s) + t"))
    assert alpha_eq(struct_step(parse("let x = u in s + t"), R.R33, (), "fwd"), parse("s + (let x = u in t)"))
    assert alpha_eq(
        struct_step(parse("let x = u in let y = w in t"), R.R30, (), "fwd"),
        parse("let y = (let x = u in w) in t"),
    )
    with pytest.raises(RewriteError):
        struct_step(parse("let x = u in x + x"), R.R32, (), "fwd")


def test_duplicate_merge_backward_only():
    t = parse("let a = u in let b = u in a + b")
    assert alpha_eq(struct_step(t, R.R31, (), "bwd"), parse("let b = u in b + b"))
    with pytest.raises(RewriteError):
        struct_step(t, R.R31, (), "fwd")


def test_canonical_and_equivalent():
    a = parse("let b = 2 in let a = 1 in a + b")
    b = parse("let a = 1 in let b = 2 in a + b")
    assert alpha_eq(canonical(a), canonical(b))
    assert equivalent(a, b)
    assert not equivalent(a, parse("let a = 1 in let b = 3 in a + b"))
    assert equivalent(parse("(let x = u in s) + t"), parse("let x = u in s + t"))


def test_is_normal():
    assert is_normal(parse("x + y"))
    assert not is_normal(parse("1 + 2"))


def test_strategies_listed():
    assert set(STRATEGIES) == {"eager_factoring", "leftmost_outermost", "bottom_up"}


# ---------------------------------------------------------------- properties


@given(source_terms(), seeds)
def test_subject_reduction(t, seed):
    ok, msg = check_subject_reduction(t, CTX, random.Random(seed))
    assert ok, msg


@given(closed_terms())
def test_normal_forms_are_values(t):
    ok, msg = check_normal_forms_are_values(t)
    assert ok, msg


@given(closed_terms(REAL), seeds)
def test_shrinking_bound(t, seed):
    ok, msg = check_shrinking_bound(t, random.Random(seed))
    assert ok, msg


@given(closed_terms(REAL))
def test_strategy_independence(t):
    ok, msg = check_strategy_independence(t)
    assert ok, msg


@given(source_terms())
def test_trace_replay(t):
    nf, trace = normalize(t, DEFAULT_RULES, "leftmost_outermost", ctx=CTX)
    assert alpha_eq(replay(t, trace.steps, CTX), nf)


@given(closed_terms())
def test_normal_forms_of_closed_terms_are_values(t):
    nf, _ = normalize(t, DEFAULT_RULES, "eager_factoring")
    assert is_value(nf)


@given(source_terms(), seeds)
def test_structural_moves_are_equivalences(t, seed):
    moves = struct_moves(t)
    if moves:
        rule, at, d = random.Random(seed).choice(moves)
        assert equivalent(t, struct_step(t, rule, at, d))


@given(source_terms(), seeds)
def test_postponement_restricted(t, seed):
    ok, msg = check_postponement(t, random.Random(seed), CTX)
    assert ok, msg


def test_bisimulation_on_independent_lets():
    t = parse("let x = 1 in let y = 2 in x + y")
    for seed in range(20):
        ok, msg = check_bisimulation(t, random.Random(seed), CTX)
        assert ok, msg


def test_pair_mobility_breaks_value_contexts():
    """A let moved into a pair leaves a bound that is no longer v·alpha, blocking GC."""
    t = parse("let v : R * R = (let c = 3 in (x2, 1)) in x1")
    moved = struct_step(t, R.R33, (0,), "fwd")
    assert alpha_eq(moved, parse("let v : R * R = (x2, let c = 3 in 1) in x1"))
    assert equivalent(t, moved)
    assert R.R21 in {r for r, at in find_redexes(t, BETA) if at == ()}
    assert R.R21 not in {r for r, at in find_redexes(moved, BETA) if at == ()}


def test_merging_garbage_changes_step_counts():
    """Merging two unused equal lets saves a collection step, so step counts are not invariant."""
    two = parse("let r = x1 in let l = x1 in x2")
    one = struct_step(two, R.R31, (), "bwd")
    assert equivalent(two, one)
    done, _ = normalize(one, SHRINKING, "leftmost_outermost", ctx=CTX)
    assert alpha_eq(done, parse("x2"))
    after_one_step = [apply(two, r, at, CTX) for r, at in find_redexes(two, {R.R21}, CTX)]
    assert after_one_step and not any(equivalent(u, done) for u in after_one_step)
