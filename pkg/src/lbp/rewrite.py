"""Rewrite rules, redex search, strategies and structural moves.

Rules are identified by ``RuleId``.  Redexes look through substitution
contexts: a stack of exponential ``let``s (single or pair binders) wrapped
around the relevant subterm.  Whenever a rule hoists such a stack to a new
position, its binders are renamed if they would capture a free variable.

Two families of strategies are provided:

* ``leftmost_outermost`` and ``eager_factoring`` search the whole term for
  redexes before every step and record the position of each step.  They are
  the reference strategies and suit small terms.
* ``bottom_up`` normalizes children before their parent and reduces at the
  parent afterwards.  A substitution of a numeral or variable is performed
  before the body is reduced; a substitution of an abstraction or pair is
  performed after, so the body is factored first.  Each step is one
  genuine rule instance, but only rule names are recorded.  This is the
  engine used by the gradient pipeline.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from ._deep import deep
from .functions import registry
from .syntax import (
    REAL,
    Ann,
    App,
    Arrow,
    ESub,
    FunApp,
    Lam,
    LetPair,
    Mult,
    Neg,
    Num,
    Pair,
    Prod,
    Sum,
    Term,
    Type,
    Var,
    alpha_eq,
    bound_names,
    fresh,
    fv,
    grad_index,
    is_value,
    rebuild,
    size,
    replace_at,
    subst_many,
    subterm,
)


class RuleId(str, Enum):
    R18 = "R18"
    R19 = "R19"
    R20 = "R20"
    R20n = "R20n"
    R21 = "R21"
    R22 = "R22"
    R23 = "R23"
    R24 = "R24"
    R25 = "R25"
    R26 = "R26"
    R27 = "R27"
    R28 = "R28"
    R29 = "R29"
    R30 = "R30"
    R31 = "R31"
    R32 = "R32"
    R33 = "R33"
    R34 = "R34"

    def __str__(self) -> str:
        return self.value


R = RuleId
BETA = frozenset({R.R18, R.R19, R.R20, R.R20n, R.R21, R.R22, R.R23, R.R24, R.R25})
ETA = frozenset({R.R26, R.R27})
ELL = frozenset({R.R28})
FN = frozenset({R.R34})
STRUCTURAL = frozenset({R.R29, R.R30, R.R31, R.R32, R.R33})
REDUCTIONS = BETA | ETA | ELL | FN
DEFAULT_RULES = BETA | ELL | FN
# The numeral-only fragment whose reductions shrink the term.
SHRINKING = frozenset({R.R20n, R.R21, R.R23, R.R24, R.R25})

_ORDER = [R.R18, R.R19, R.R20n, R.R20, R.R21, R.R22, R.R23, R.R24, R.R25, R.R34, R.R28, R.R26, R.R27]


def rule_class(rule: RuleId) -> str:
    if rule in BETA:
        return "beta"
    if rule in ETA:
        return "eta"
    if rule in ELL:
        return "ell"
    if rule in FN:
        return "fn"
    return "structural"


def parse_rules(spec: str) -> frozenset:
    """Rule set from a comma list of rule ids or class names (beta, eta, ell, fn)."""
    out: set = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        low = part.lower()
        if low == "beta":
            out |= BETA
        elif low == "eta":
            out |= ETA
        elif low in ("ell", "l", "linear"):
            out |= ELL
        elif low in ("fn", "function"):
            out |= FN
        elif low == "all":
            out |= DEFAULT_RULES
        else:
            key = part if part.startswith("R") else "R" + part
            try:
                out.add(RuleId(key))
            except ValueError:
                raise ValueError(f"unknown rule {part!r}") from None
    return frozenset(out)


class RewriteError(ValueError):
    """A rule does not apply at the given position."""


class FuelExhausted(RuntimeError):
    def __init__(self, trace: "ReductionTrace"):
        self.trace = trace
        super().__init__(f"fuel exhausted after {trace.total} steps")


@dataclass
class ReductionTrace:
    initial: Term
    final: Term | None = None
    steps: list = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)
    rule_counts: Counter = field(default_factory=Counter)
    # R20 steps that copy an abstraction or a pair
    duplications: int = 0

    def record(self, rule: RuleId, path) -> None:
        self.steps.append((rule, path))
        self.counts[rule_class(rule)] += 1
        self.rule_counts[rule] += 1

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def by_class(self) -> dict:
        return {k: self.counts.get(k, 0) for k in ("beta", "eta", "ell", "fn", "structural")}


# ---------------------------------------------------------------- substitution contexts


@dataclass(frozen=True)
class Frame:
    """One explicit substitution of a context: ``[var <- bound]`` or ``[(x,y) <- bound]``."""

    names: tuple
    types: tuple
    bound: Term

    def wrap(self, body: Term) -> Term:
        if len(self.names) == 1:
            return ESub(self.names[0], Ann.EXP, self.types[0], self.bound, body)
        return LetPair(self.names[0], self.types[0], self.names[1], self.types[1], self.bound, body)


def _frame_of(t: Term) -> Frame | None:
    if isinstance(t, ESub) and t.ann is Ann.EXP:
        return Frame((t.var,), (t.ty,), t.bound)
    if isinstance(t, LetPair):
        return Frame((t.x, t.y), (t.xty, t.yty), t.bound)
    return None


def peel(t: Term) -> tuple[Term, list[Frame]]:
    """Split ``t`` into a core and the context around it (frames outermost first)."""
    frames = []
    while True:
        f = _frame_of(t)
        if f is None:
            return t, frames
        frames.append(f)
        t = t.body


def wrap(core: Term, frames: list[Frame]) -> Term:
    for f in reversed(frames):
        core = f.wrap(core)
    return core


def frame_names(frames: Iterable[Frame]) -> set:
    return {n for f in frames for n in f.names}


def bounds_fv(frames: Iterable[Frame]) -> frozenset:
    out: frozenset = frozenset()
    for f in frames:
        out = out | fv(f.bound)
    return out


def freshen(frames: list[Frame], inner: list[Term], danger) -> tuple[list[Frame], list[Term]]:
    """Rename binders of ``frames`` that belong to ``danger``.

    ``inner`` are the terms that were in the scope of the whole context;
    they are renamed consistently.  Fresh names cannot clash with anything.
    """
    if not danger or not any(n in danger for f in frames for n in f.names):
        return frames, inner
    sigma: dict = {}
    out = []
    for f in frames:
        bound = subst_many(f.bound, sigma) if sigma else f.bound
        names = []
        for n in f.names:
            if n in danger:
                m = fresh(n)
                sigma[n] = Var(m)
                names.append(m)
            else:
                sigma.pop(n, None)
                names.append(n)
        out.append(Frame(tuple(names), f.types, bound))
    if sigma:
        inner = [subst_many(u, sigma) for u in inner]
    return out, inner


# ---------------------------------------------------------------- typing hints

TypeEnv = Mapping[str, Type]


def _is_neg(name: str, env: TypeEnv, ctx: TypeEnv | None) -> bool:
    ty = env.get(name)
    if ty is None and ctx is not None:
        ty = ctx.get(name)
    if ty is None:
        return grad_index(name) is not None
    return isinstance(ty, Neg)


def _extend(env: dict, t: Term, index: int) -> dict:
    if isinstance(t, Lam):
        return {**env, t.var: t.ty}
    if isinstance(t, ESub) and index == 1:
        return {**env, t.var: t.ty}
    if isinstance(t, LetPair) and index == 1:
        return {**env, t.x: t.xty, t.y: t.yty}
    return env


def env_at(t: Term, path, ctx: TypeEnv | None = None) -> dict:
    env = dict(ctx or {})
    for i in path:
        env = _extend(env, t, i)
        t = t.children()[i]
    return env


# ---------------------------------------------------------------- root contractions


def _value_core(t: Term):
    core, frames = peel(t)
    return (core, frames) if is_value(core) else None


def _num_core(t: Term):
    core, frames = peel(t)
    return (core, frames) if isinstance(core, Num) else None


def _lin_app(t: Term, env, ctx):
    """Match ``(x alpha s) beta`` with x of negation type; returns its parts."""
    app, beta = peel(t)
    if not isinstance(app, App):
        return None
    head, alpha = peel(app.fun)
    if not isinstance(head, Var) or not _is_neg(head.name, env, ctx):
        return None
    if head.name in frame_names(alpha) or head.name in frame_names(beta):
        return None
    return head, alpha, app.arg, beta


def _sum_num(t: Sum):
    a, b = _num_core(t.left), _num_core(t.right)
    if a is None or b is None:
        return None
    return a, b


def _sum_pair(t: Sum):
    (pa, fa), (pb, fb) = peel(t.left), peel(t.right)
    if isinstance(pa, Pair) and isinstance(pb, Pair):
        return (pa, fa), (pb, fb)
    return None


def match(rule: RuleId, t: Term, env: TypeEnv = {}, ctx: TypeEnv | None = None) -> bool:
    """Whether ``rule`` has a redex rooted at ``t`` (R20 variants: at the binder)."""
    if rule is R.R18:
        return isinstance(t, App) and isinstance(peel(t.fun)[0], Lam)
    if rule is R.R19:
        return isinstance(t, LetPair) and isinstance(peel(t.bound)[0], Pair)
    if rule in (R.R20, R.R20n, R.R21):
        if not (isinstance(t, ESub) and t.ann is Ann.EXP):
            return False
        vc = _value_core(t.bound)
        if vc is None:
            return False
        present = t.var in fv(t.body)
        if rule is R.R21:
            return not present
        return present and (isinstance(vc[0], Num) == (rule is R.R20n))
    if rule is R.R22:
        return isinstance(t, ESub) and t.ann is Ann.LIN and _value_core(t.bound) is not None
    if rule is R.R23:
        return isinstance(t, Sum) and _sum_num(t) is not None
    if rule is R.R24:
        return isinstance(t, Sum) and _sum_pair(t) is not None
    if rule is R.R25:
        return isinstance(t, Mult) and _num_core(t.left) is not None and _num_core(t.right) is not None
    if rule is R.R34:
        return (
            isinstance(t, FunApp)
            and t.sym in registry()
            and all(_num_core(a) is not None for a in t.args)
        )
    if rule is R.R28:
        if not isinstance(t, Sum):
            return False
        a, b = _lin_app(t.left, env, ctx), _lin_app(t.right, env, ctx)
        return a is not None and b is not None and a[0].name == b[0].name
    if rule is R.R27:
        return isinstance(t, ESub) and t.ann is Ann.EXP and isinstance(t.bound, Pair) and isinstance(t.ty, Prod)
    if rule is R.R26:
        return False  # needs the type of t; see find_redexes
    return False


def contract(rule: RuleId, t: Term, env: TypeEnv = {}, ctx: TypeEnv | None = None) -> Term:
    """Rewrite the redex rooted at ``t`` (R20 variants substitute every occurrence)."""
    if not match(rule, t, env, ctx) and rule is not R.R26:
        raise RewriteError(f"{rule} does not apply to {t}")
    if rule is R.R18:
        lam, alpha = peel(t.fun)
        alpha, (body,) = _hoist_over(alpha, [lam], fv(t.arg))
        lam = body
        return wrap(ESub(lam.var, lam.ann, lam.ty, t.arg, lam.body), alpha)
    if rule is R.R19:
        return _contract_pair(t)
    if rule in (R.R20, R.R20n):
        return _substitute_all(t)
    if rule is R.R21:
        v, alpha = peel(t.bound)
        # the body was never in the scope of alpha: rename alpha only
        alpha, _ = freshen(alpha, [], fv(t.body))
        return wrap(t.body, alpha)
    if rule is R.R22:
        v, alpha = peel(t.bound)
        alpha, (body, v) = _scope_swap(alpha, t.body, v, t.var)
        return wrap(subst_many(body, {t.var: v}), alpha)
    if rule is R.R23:
        (r, fa), (q, fb) = _sum_num(t)
        return _combine_nums(Num(r.value + q.value), [fa, fb])
    if rule is R.R25:
        (r, fa), (q, fb) = _num_core(t.left), _num_core(t.right)
        return _combine_nums(Num(r.value * q.value), [fa, fb])
    if rule is R.R34:
        parts = [_num_core(a) for a in t.args]
        sym = registry()[t.sym]
        try:
            value = float(sym(*[p[0].value for p in parts]))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise RewriteError(f"{t.sym} undefined at this point: {exc}") from None
        return _combine_nums(Num(value), [p[1] for p in parts])
    if rule is R.R24:
        (pa, fa), (pb, fb) = _sum_pair(t)
        fb, (u1, u2) = freshen(fb, [pb.fst, pb.snd], fv(pa.fst) | fv(pa.snd) | bounds_fv(fa))
        fa, (t1, t2) = freshen(fa, [pa.fst, pa.snd], fv(u1) | fv(u2))
        return wrap(Pair(Sum(t1, u1), Sum(t2, u2)), fb + fa)
    if rule is R.R28:
        return _contract_factor(t, env, ctx)
    if rule is R.R27:
        y, y2 = fresh("p"), fresh("q")
        ty = t.ty
        inner = ESub(t.var, Ann.EXP, ty, Pair(Var(y), Var(y2)), t.body)
        body_fv = fv(t.body)
        if y in body_fv or y2 in body_fv:  # impossible with fresh names
            raise RewriteError("fresh name clash")
        return LetPair(y, ty.left, y2, ty.right, t.bound, inner)
    if rule is R.R26:
        raise RewriteError("R26 needs a type; use apply")
    raise RewriteError(f"{rule} is not a reduction rule")


def _hoist_over(alpha, inner, danger):
    return freshen(alpha, inner, danger)


def _scope_swap(alpha, body, v, var):
    """Hoist ``alpha`` (around v) over ``body``; rename its binders free in the body."""
    danger = fv(body) - {var}
    alpha, (v,) = freshen(alpha, [v], danger)
    return alpha, (body, v)


def _combine_nums(num: Num, contexts: list[list[Frame]]) -> Term:
    """``num alpha_1 ... alpha_k``: later contexts scope over earlier bounds."""
    out: list[Frame] = []
    seen: frozenset = frozenset()
    for ctx_frames in contexts:
        ctx_frames, _ = freshen(ctx_frames, [], seen)
        seen = seen | bounds_fv(ctx_frames)
        # contexts are listed inner to outer; wrap order is outermost first
        out = ctx_frames + out
    return wrap(num, out)


def _contract_pair(t: LetPair) -> Term:
    pair, alpha = peel(t.bound)
    x, y, body = t.x, t.y, t.body
    p1, p2 = pair.fst, pair.snd
    if y in fv(p1):
        y2 = fresh(y)
        body = subst_many(body, {y: Var(y2)})
        y = y2
    danger = fv(body) - {x, y}
    alpha, (p1, p2) = freshen(alpha, [p1, p2], danger)
    inner = ESub(y, Ann.EXP, t.yty, p2, ESub(x, Ann.EXP, t.xty, p1, body))
    return wrap(inner, alpha)


def _substitute_all(t: ESub) -> Term:
    """All R20 steps on one binder followed by the garbage collection step."""
    v, alpha = peel(t.bound)
    alpha, (body, v) = _scope_swap(alpha, t.body, v, t.var)
    return wrap(subst_many(body, {t.var: v}), alpha)


def _contract_factor(t: Sum, env, ctx) -> Term:
    x, alpha, s, beta = _lin_app(t.left, env, ctx)
    _, alpha2, s2, beta2 = _lin_app(t.right, env, ctx)
    head = Var(x.name, x.ann)
    # Result x (s + s2) alpha beta alpha2 beta2, contexts listed inner to outer.
    beta2, (carrier, s2) = freshen(
        beta2, [wrap(head, alpha2), s2], fv(s) | bounds_fv(alpha) | bounds_fv(beta)
    )
    alpha2 = peel(carrier)[1]
    beta, (s, carrier) = freshen(beta, [s, wrap(head, alpha)], fv(s2))
    alpha = peel(carrier)[1]
    alpha2, _ = freshen(alpha2, [], fv(s) | fv(s2) | bounds_fv(alpha) | bounds_fv(beta))
    alpha, _ = freshen(alpha, [], fv(s) | fv(s2))
    return wrap(App(head, Sum(s, s2)), beta2 + alpha2 + beta + alpha)


def _cheap(v: Term) -> bool:
    """Numerals, variables and tuples of them: free to copy."""
    while isinstance(v, Pair):
        if not _cheap(v.fst):
            return False
        v = v.snd
    return isinstance(v, (Var, Num))


# ---------------------------------------------------------------- redex search


def _occurrence_paths(t: Term, x: str, path=()) -> list:
    """Paths of the free occurrences of ``x`` in ``t``, in preorder."""
    out: list = []
    stack = [(t, path)]
    while stack:
        u, p = stack.pop()
        if x not in fv(u):
            continue
        if isinstance(u, Var):
            out.append(p)
            continue
        kids = u.children()
        for i in range(len(kids) - 1, -1, -1):
            if x in bound_names(u, i):
                continue
            stack.append((kids[i], p + (i,)))
    return out


def _type_of(t: Term, env: dict):
    from .typing import LbpTypeError, infer

    try:
        return infer(env, t)
    except (LbpTypeError, RecursionError):
        return None


def _walk(t: Term, path, env, out, rules, ctx):
    for rule in _ORDER:
        if rule not in rules:
            continue
        if rule is R.R26:
            ty = _type_of(t, env)
            if isinstance(ty, (Arrow, Neg)):
                out.append((rule, path))
        elif rule in (R.R20, R.R20n):
            if match(rule, t, env, ctx):
                for occ in _occurrence_paths(t.body, t.var, path + (1,)):
                    out.append((rule, occ))
        elif match(rule, t, env, ctx):
            out.append((rule, path))
    for i, k in enumerate(t.children()):
        _walk(k, path + (i,), _extend(env, t, i), out, rules, ctx)


@deep
def find_redexes(t: Term, rules=REDUCTIONS, ctx: TypeEnv | None = None) -> list:
    """Every redex of ``t`` as ``(rule, path)`` in leftmost-outermost order.

    Redexes at one node are listed in a fixed rule order.  For R20 and R20n
    there is one entry per occurrence of the bound variable and the path
    points at that occurrence.
    """
    out: list = []
    _walk(t, (), dict(ctx or {}), out, frozenset(rules), ctx)
    return out


def _binder_of(t: Term, occ):
    """Path of the binder of the variable occurrence at ``occ``."""
    name = subterm(t, occ)
    if not isinstance(name, Var):
        raise RewriteError(f"no variable at {occ}")
    found = None
    u = t
    for depth, i in enumerate(occ):
        if name.name in bound_names(u, i):
            found = tuple(occ[:depth])
        u = u.children()[i]
    if found is None:
        raise RewriteError(f"{name.name} is free at {occ}")
    return found


def _replace_occurrence(t: Term, path, v: Term) -> Term:
    """Plug ``v`` at ``path``, renaming binders on the way that would capture it."""
    if not path:
        return v
    i, rest = path[0], path[1:]
    kids = list(t.children())
    names = bound_names(t, i)
    danger = [n for n in names if n in fv(v)]
    if danger:
        sigma = {n: Var(fresh(n)) for n in danger}
        kids[i] = subst_many(kids[i], sigma)
        t = _rename_binders(t, sigma)
    kids[i] = _replace_occurrence(kids[i], rest, v)
    return rebuild(t, kids)


def _rename_binders(t: Term, sigma: dict) -> Term:
    def nm(n):
        return sigma[n].name if n in sigma else n

    if isinstance(t, Lam):
        return Lam(nm(t.var), t.ann, t.ty, t.body)
    if isinstance(t, ESub):
        return ESub(nm(t.var), t.ann, t.ty, t.bound, t.body)
    if isinstance(t, LetPair):
        return LetPair(nm(t.x), t.xty, nm(t.y), t.yty, t.bound, t.body)
    return t


@deep
def apply(t: Term, rule: RuleId, at, ctx: TypeEnv | None = None) -> Term:
    """Rewrite ``t`` with ``rule`` at path ``at`` (R20 variants: the occurrence)."""
    rule = RuleId(rule)
    at = tuple(at)
    if rule in (R.R20, R.R20n):
        bp = _binder_of(t, at)
        node = subterm(t, bp)
        if not match(rule, node, env_at(t, bp, ctx), ctx) or at[len(bp)] != 1:
            raise RewriteError(f"{rule} does not apply at {at}")
        v, alpha = peel(node.bound)
        alpha, (body, v) = _scope_swap(alpha, node.body, v, node.var)
        body = _replace_occurrence(body, at[len(bp) + 1 :], v)
        new = wrap(ESub(node.var, Ann.EXP, node.ty, v, body), alpha)
        return replace_at(t, bp, new)
    node = subterm(t, at)
    env = env_at(t, at, ctx)
    if rule is R.R26:
        ty = _type_of(node, env)
        y = fresh("e")
        if isinstance(ty, Neg):
            new = Lam(y, Ann.LIN, REAL, App(node, Var(y, Ann.LIN)))
        elif isinstance(ty, Arrow):
            new = Lam(y, Ann.EXP, ty.dom, App(node, Var(y)))
        else:
            raise RewriteError(f"R26 needs a function type at {at}")
        return replace_at(t, at, new)
    if rule in STRUCTURAL:
        raise RewriteError(f"{rule} is structural; use struct_step")
    return replace_at(t, at, contract(rule, node, env, ctx))


def replay(t: Term, steps, ctx: TypeEnv | None = None) -> Term:
    for rule, path in steps:
        if path is None:
            raise RewriteError("trace has no positions")
        t = apply(t, rule, path, ctx)
    return t


# ---------------------------------------------------------------- reference strategies


def default_fuel() -> int:
    import os

    try:
        return int(float(os.environ.get("LBP_FUEL", "1e6")))
    except ValueError:
        return 1_000_000


_TIER = {
    R.R28: 0,
    R.R23: 1,
    R.R24: 1,
    R.R25: 1,
    R.R34: 1,
    R.R20n: 2,
    R.R21: 2,
    R.R18: 3,
    R.R19: 3,
    R.R22: 3,
    R.R26: 6,
    R.R27: 6,
}


def _r20_tier(t: Term, occ) -> int:
    """Cheap or needed substitutions rank with the other beta rules, the rest last."""
    bp = _binder_of(t, occ)
    v = peel(subterm(t, bp).bound)[0]
    if _cheap(v):
        return 3
    parent = subterm(t, occ[:-1])
    i = occ[-1]
    if isinstance(parent, App) and i == 0:
        return 3
    if isinstance(parent, LetPair) and i == 0:
        return 3
    if isinstance(parent, Sum) and isinstance(v, Pair):
        return 3
    return 4


def _pick(t: Term, redexes: list, strategy: str):
    if strategy == "leftmost_outermost":
        return redexes[0]
    best, best_tier = None, None
    for rule, path in redexes:
        tier = _r20_tier(t, path) if rule is R.R20 else _TIER[rule]
        if best_tier is None or tier < best_tier:
            best, best_tier = (rule, path), tier
    return best


STRATEGIES = ("eager_factoring", "leftmost_outermost", "bottom_up")


def normalize(
    t: Term,
    rules=DEFAULT_RULES,
    strategy: str = "eager_factoring",
    fuel: int | None = None,
    ctx: TypeEnv | None = None,
) -> tuple[Term, ReductionTrace]:
    """Reduce ``t`` to normal form for ``rules``; returns the result and its trace."""
    rules = frozenset(RuleId(r) for r in rules)
    fuel = default_fuel() if fuel is None else fuel
    if strategy == "bottom_up":
        tr = _Engine(rules, fuel, ctx).run(t)
        return tr.final, tr
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    trace = ReductionTrace(initial=t)
    while True:
        redexes = find_redexes(t, rules, ctx)
        if not redexes:
            trace.final = t
            return t, trace
        if trace.total >= fuel:
            trace.final = t
            raise FuelExhausted(trace)
        rule, path = _pick(t, redexes, strategy)
        if rule is R.R20 and not isinstance(peel(subterm(t, _binder_of(t, path)).bound)[0], Var):
            trace.duplications += 1
        t = apply(t, rule, path, ctx)
        trace.record(rule, path)


def is_normal(t: Term, rules=DEFAULT_RULES, ctx: TypeEnv | None = None) -> bool:
    return not find_redexes(t, rules, ctx)


# ---------------------------------------------------------------- bottom-up engine

_KEYS: dict = {}


class _Engine:
    """Children first, then the parent; see the module docstring."""

    def __init__(self, rules, fuel, ctx=None, keep_real=False):
        self.rules = rules
        self.fuel = fuel
        self.keep_real = keep_real
        self.key = _KEYS.setdefault((rules, keep_real), object())
        self.env: dict = dict(ctx or {})
        self.ctx = ctx
        self.trace: ReductionTrace | None = None

    def run(self, t: Term) -> ReductionTrace:
        self.trace = ReductionTrace(initial=t)
        self.trace.final = _run_engine(self, t)
        return self.trace

    def step(self, rule: RuleId, times: int = 1) -> None:
        tr = self.trace
        for _ in range(times):
            tr.record(rule, None)
        if tr.total > self.fuel:
            raise FuelExhausted(tr)

    def under(self, names, types, t: Term) -> Term:
        saved = [(n, self.env.get(n, _MISSING)) for n in names]
        for n, ty in zip(names, types):
            self.env[n] = ty
        try:
            return self.norm(t)
        finally:
            for n, old in saved:
                if old is _MISSING:
                    self.env.pop(n, None)
                else:
                    self.env[n] = old

    def norm(self, t: Term) -> Term:
        if t._nf is self.key:
            return t
        out = self._norm(t)
        out._nf = self.key
        return out

    def _norm(self, t: Term) -> Term:
        rules = self.rules
        if isinstance(t, (Var, Num)):
            return t
        if isinstance(t, Lam):
            body = self.under((t.var,), (t.ty,), t.body)
            return t if body is t.body else Lam(t.var, t.ann, t.ty, body)
        if isinstance(t, Pair):
            a, b = self.norm(t.fst), self.norm(t.snd)
            return t if (a is t.fst and b is t.snd) else Pair(a, b)
        if isinstance(t, App):
            f, a = self.norm(t.fun), self.norm(t.arg)
            node = t if (f is t.fun and a is t.arg) else App(f, a)
            if R.R18 in rules and isinstance(peel(f)[0], Lam):
                self.step(R.R18)
                return self.norm(contract(R.R18, node))
            return node
        if isinstance(t, LetPair):
            b = self.norm(t.bound)
            if R.R19 in rules and isinstance(peel(b)[0], Pair):
                self.step(R.R19)
                return self.norm(_contract_pair(LetPair(t.x, t.xty, t.y, t.yty, b, t.body)))
            body = self.under((t.x, t.y), (t.xty, t.yty), t.body)
            return LetPair(t.x, t.xty, t.y, t.yty, b, body)
        if isinstance(t, ESub):
            return self._esub(t)
        if isinstance(t, (Sum, Mult)):
            a, b = self.norm(t.left), self.norm(t.right)
            node = t if (a is t.left and b is t.right) else type(t)(a, b)
            if isinstance(node, Sum):
                for rule in (R.R28, R.R23, R.R24):
                    if rule in rules and match(rule, node, self.env, self.ctx):
                        self.step(rule)
                        return self.norm(contract(rule, node, self.env, self.ctx))
            elif R.R25 in rules and match(R.R25, node):
                self.step(R.R25)
                return self.norm(contract(R.R25, node))
            return node
        if isinstance(t, FunApp):
            args = [self.norm(a) for a in t.args]
            node = FunApp(t.sym, args)
            if R.R34 in rules and match(R.R34, node):
                self.step(R.R34)
                return self.norm(contract(R.R34, node))
            return node
        raise TypeError(f"not a term: {t!r}")

    def _esub(self, t: ESub) -> Term:
        rules = self.rules
        b = self.norm(t.bound)
        core, alpha = peel(b)
        if t.ann is Ann.LIN:
            if R.R22 in rules and is_value(core):
                self.step(R.R22)
                return self.norm(contract(R.R22, ESub(t.var, t.ann, t.ty, b, t.body)))
            body = self.under((t.var,), (REAL,), t.body)
            return ESub(t.var, t.ann, t.ty, b, body)
        ok = is_value(core) and not (self.keep_real and t.ty == REAL)
        sub_rule = R.R20n if isinstance(core, Num) else R.R20
        body = t.body
        if ok and t.var in fv(body) and _cheap(core) and sub_rule in rules:
            return self._substitute(t, core, alpha, body, sub_rule)
        body = self.under((t.var,), (t.ty,), body)
        if ok and t.var not in fv(body) and R.R21 in rules:
            self.step(R.R21)
            alpha, _ = freshen(alpha, [], fv(body))
            return self.norm(wrap(body, alpha))
        if ok and sub_rule in rules and t.var in fv(body):
            return self._substitute(t, core, alpha, body, sub_rule)
        return ESub(t.var, t.ann, t.ty, b, body)

    def _substitute(self, t, v, alpha, body, sub_rule) -> Term:
        k = len(_occurrence_paths(body, t.var))
        self.step(sub_rule, k)
        if not isinstance(v, (Var, Num)):
            self.trace.duplications += k
        alpha, (body, v) = _scope_swap(alpha, body, v, t.var)
        body = subst_many(body, {t.var: v})
        if R.R21 in self.rules:
            self.step(R.R21)
            return self.norm(wrap(body, alpha))
        return self.norm(wrap(ESub(t.var, Ann.EXP, t.ty, v, body), alpha))


_MISSING = object()


@deep
def _run_engine(engine: _Engine, t: Term) -> Term:
    return engine.norm(t)


def reduce_to_graph(t: Term, fuel: int | None = None) -> tuple[Term, ReductionTrace]:
    """Eliminate abstractions and pairs, keeping let-bindings at type R.

    Uses beta steps only and never substitutes a binder of type R, so a
    ground-typed program ends as a computational graph.
    """
    rules = frozenset({R.R18, R.R19, R.R20, R.R20n, R.R21})
    fuel = default_fuel() if fuel is None else fuel
    tr = _Engine(rules, fuel, keep_real=True).run(t)
    return tr.final, tr


# ---------------------------------------------------------------- structural equivalence

_BINARY = (App, Sum, Mult, Pair)


def _frame_node(t: Term) -> bool:
    return isinstance(t, LetPair) or (isinstance(t, ESub) and t.ann is Ann.EXP)


def _binders(t: Term) -> frozenset:
    if isinstance(t, ESub):
        return frozenset((t.var,))
    return frozenset((t.x, t.y))


def _with(t: Term, bound: Term, body: Term) -> Term:
    return rebuild(t, [bound, body])


@deep
def struct_step(t: Term, rule: RuleId, at, direction: str = "fwd") -> Term:
    """One structural move at path ``at``.

    R29 swaps two adjacent independent lets (at the outer one).  R30 moves
    an outer let into the bound of the let below it (fwd) or back out (bwd,
    at the inner one).  R32 and R33 push a let into the left or right
    operand of a binary node (fwd, at the let) or pull it out (bwd, at the
    binary node).  R31 merges two lets of the same term (bwd only, at the
    outer one).
    """
    rule = RuleId(rule)
    if direction not in ("fwd", "bwd"):
        raise ValueError("direction must be 'fwd' or 'bwd'")
    at = tuple(at)
    node = subterm(t, at)
    new = _struct(node, rule, direction)
    if new is None:
        raise RewriteError(f"{rule} {direction} does not apply at {at}")
    return replace_at(t, at, new)


def _struct(node: Term, rule: RuleId, direction: str):
    if rule is R.R29:
        if not (_frame_node(node) and _frame_node(node.body)):
            return None
        inner = node.body
        bo, bi = _binders(node), _binders(inner)
        if bo & bi or bo & fv(inner.bound) or bi & fv(node.bound):
            return None
        return _with(inner, inner.bound, _with(node, node.bound, inner.body))
    if rule is R.R30:
        if direction == "fwd":
            if not (_frame_node(node) and _frame_node(node.body)):
                return None
            inner = node.body
            if _binders(node) & fv(inner.body):
                return None
            return _with(inner, _with(node, node.bound, inner.bound), inner.body)
        if not (_frame_node(node) and _frame_node(node.bound)):
            return None
        outer = node.bound
        if _binders(outer) & fv(node.body):
            return None
        return _with(outer, outer.bound, _with(node, outer.body, node.body))
    if rule is R.R31:
        if direction != "bwd":
            return None
        if not (isinstance(node, ESub) and isinstance(node.body, ESub)):
            return None
        inner = node.body
        if node.ann is not Ann.EXP or inner.ann is not Ann.EXP or node.ty != inner.ty:
            return None
        if node.var == inner.var or node.var in fv(inner.bound):
            return None
        if not alpha_eq(node.bound, inner.bound):
            return None
        body = subst_many(inner.body, {node.var: Var(inner.var)})
        return ESub(inner.var, Ann.EXP, inner.ty, inner.bound, body)
    if rule in (R.R32, R.R33):
        side = 0 if rule is R.R32 else 1
        if direction == "fwd":
            if not (_frame_node(node) and isinstance(node.body, _BINARY)):
                return None
            b = node.body
            kids = list(b.children())
            if _binders(node) & fv(kids[1 - side]):
                return None
            kids[side] = _with(node, node.bound, kids[side])
            return rebuild(b, kids)
        if not isinstance(node, _BINARY):
            return None
        kids = list(node.children())
        f = kids[side]
        if not _frame_node(f) or _binders(f) & fv(kids[1 - side]):
            return None
        kids[side] = f.body
        return _with(f, f.bound, rebuild(node, kids))
    return None


def struct_moves(t: Term, rules=STRUCTURAL) -> list:
    """All applicable structural moves ``(rule, path, direction)`` among ``rules``."""
    rules = frozenset(RuleId(r) for r in rules)
    out = []
    for path, node in _preorder(t):
        for rule in (R.R29, R.R30, R.R32, R.R33):
            if rule not in rules:
                continue
            for d in ("fwd", "bwd"):
                if rule is R.R29 and d == "bwd":
                    continue
                if _struct(node, rule, d) is not None:
                    out.append((rule, path, d))
        if R.R31 in rules and _struct(node, R.R31, "bwd") is not None:
            out.append((R.R31, path, "bwd"))
    return out


def _preorder(t: Term, path=()):
    stack = [(t, path)]
    while stack:
        u, p = stack.pop()
        yield p, u
        kids = u.children()
        for i in range(len(kids) - 1, -1, -1):
            stack.append((kids[i], p + (i,)))


@deep
def canonical(t: Term) -> Term:
    """A representative of the structural class of ``t``.

    Exponential lets float outward past binary nodes and out of the bounds
    of other lets, renaming when needed; each chain of lets is then ordered
    by dependency, ties broken by the unfolded bound, and a let repeating
    an outer let of the same term is merged into it.
    """
    return _canon(t)


def _float(t: Term) -> Term:
    """Lets of ``t`` float to the top; returns a let chain around a let-free core."""
    if isinstance(t, (Var, Num)):
        return t
    if isinstance(t, Lam):
        return Lam(t.var, t.ann, t.ty, _canon(t.body))
    if _frame_node(t) and not (isinstance(t, ESub) and t.ann is Ann.LIN):
        b_core, b_frames = peel(_float(t.bound))
        body = _float(t.body)
        me = _frame_of(t)
        # frames of the bound leave it: they must not capture the body
        b_frames, (b_core,) = freshen(b_frames, [b_core], fv(t.body) | set(me.names))
        me = Frame(me.names, me.types, b_core)
        return wrap(body, b_frames + [me])
    if isinstance(t, ESub):  # linear: lets stay inside
        return ESub(t.var, t.ann, t.ty, _canon(t.bound), _canon(t.body))
    kids = [_float(k) for k in t.children()]
    frames_all: list = []
    cores: list = []
    for i, k in enumerate(kids):
        core, frames = peel(k)
        others = frozenset().union(*(fv(kids[j]) for j in range(len(kids)) if j != i))
        frames, (core,) = freshen(frames, [core], others | frozenset().union(*(fv(c) for c in cores)))
        frames_all.extend(frames)
        cores.append(core)
    return wrap(rebuild(t, cores), frames_all)


def _canon(t: Term) -> Term:
    core, frames = peel(_float(t))
    core, frames = _merge_duplicates(core, _order(frames))
    return wrap(core, frames)


def _merge_duplicates(core: Term, frames: list[Frame]):
    """Drop a let whose bound repeats an outer let of the same chain."""
    changed = True
    while changed:
        changed = False
        for i, f in enumerate(frames):
            if len(f.names) != 1:
                continue
            x = f.names[0]
            for j in range(i + 1, len(frames)):
                g = frames[j]
                between = frame_names(frames[i + 1 : j])
                if len(g.names) != 1 or g.types != f.types or not alpha_eq(f.bound, g.bound):
                    continue
                if between & fv(g.bound) or x in frame_names(frames[i + 1 :]):
                    continue
                inner = subst_many(wrap(core, frames[j + 1 :]), {g.names[0]: Var(x)})
                core, rest = peel(inner)
                frames = frames[:j] + rest
                changed = True
                break
            if changed:
                break
    return core, frames


def _order(frames: list[Frame]) -> list[Frame]:
    """Dependency-respecting order, outermost first, ties by unfolded bound."""
    keys = _tie_keys(frames)
    remaining = list(range(len(frames)))
    out: list = []
    while remaining:
        ready = []
        for pos, i in enumerate(remaining):
            f = frames[i]
            later = [frames[j] for j in remaining[:pos]]
            # f may move outermost if no earlier frame binds its bound's names
            # and it does not shadow or get shadowed by them.
            if any(n in fv(f.bound) or n in f.names for g in later for n in g.names):
                continue
            if any(n in fv(g.bound) for g in later for n in f.names):
                continue
            ready.append(pos)
        pos = min(ready, key=lambda q: (keys[remaining[q]], q))
        out.append(frames[remaining.pop(pos)])
    return out


_UNFOLD_CAP = 5000


def _tie_keys(frames: list[Frame]) -> list[str]:
    """Bounds with outer lets unfolded, printed up to renaming of binders."""
    sigma: dict = {}
    keys = []
    for f in frames:
        b = subst_many(f.bound, sigma) if sigma else f.bound
        if size(b) > _UNFOLD_CAP:
            b = f.bound
        keys.append(_shape(b))
        if len(f.names) == 1:
            sigma[f.names[0]] = b
        else:
            sigma[f.names[0]] = FunApp("#fst", [b])
            sigma[f.names[1]] = FunApp("#snd", [b])
    return keys


def _shape(t: Term) -> str:
    out: list = []
    _shape_rec(t, {}, out)
    return "".join(out)


@deep
def _shape_rec(t: Term, env: dict, out: list) -> None:
    if isinstance(t, Var):
        out.append(env.get(t.name, t.name) + " ")
        return
    if isinstance(t, Num):
        out.append(repr(t.value) + " ")
        return
    if isinstance(t, FunApp):
        out.append(t.sym + "(")
    else:
        out.append(type(t).__name__ + "(")
    for i, k in enumerate(t.children()):
        names = bound_names(t, i)
        inner = env
        if names:
            inner = dict(env)
            for n in names:
                inner[n] = "_%d" % len(inner)
        _shape_rec(k, inner, out)
    out.append(")")


def equivalent(a: Term, b: Term) -> bool:
    """Whether two terms are structurally equivalent, up to renaming.

    Both sides are brought to canonical form; let chains are then matched
    frame by frame, trying every independent frame of the right chain as
    the partner of the outermost frame of the left one.
    """
    if alpha_eq(a, b):
        return True
    return deep(_eqv)(canonical(a), canonical(b))


def _eqv(t: Term, u: Term) -> bool:
    if _frame_node(t) or _frame_node(u):
        ct, ft = peel(t)
        cu, fu = peel(u)
        if len(ft) != len(fu):
            return False
        return _match_chain(ft, ct, fu, cu)
    if type(t) is not type(u):
        return False
    if isinstance(t, Var):
        return t.name == u.name and t.ann is u.ann
    if isinstance(t, Num):
        return t.value == u.value
    if isinstance(t, Lam):
        if t.ann is not u.ann or t.ty != u.ty:
            return False
        c = fresh("c")
        return _eqv(_rename(t.body, t.var, c), _rename(u.body, u.var, c))
    if isinstance(t, ESub):  # linear
        if t.ty != u.ty or not _eqv(t.bound, u.bound):
            return False
        c = fresh("c")
        return _eqv(_rename(t.body, t.var, c), _rename(u.body, u.var, c))
    if isinstance(t, FunApp) and t.sym != u.sym:
        return False
    kt, ku = t.children(), u.children()
    return len(kt) == len(ku) and all(_eqv(x, y) for x, y in zip(kt, ku))


def _rename(t: Term, old: str, new: str) -> Term:
    return subst_many(t, {old: Var(new)})


def _rename_ann(t: Term, names, fresh_names) -> Term:
    return subst_many(t, {n: Var(m) for n, m in zip(names, fresh_names)})


def _match_chain(ft: list, ct: Term, fu: list, cu: Term) -> bool:
    if not ft:
        return _eqv(ct, cu)
    f = ft[0]
    for j, g in enumerate(fu):
        if len(g.names) != len(f.names) or g.types != f.types:
            continue
        before = fu[:j]
        names_before = frame_names(before)
        # g must be able to move outermost among the remaining frames
        if fv(g.bound) & names_before or set(g.names) & names_before:
            continue
        if any(n in bounds_fv(before) for n in g.names):
            continue
        if not _eqv(f.bound, g.bound):
            continue
        cs = [fresh("c") for _ in f.names]
        rest_t = _rename_ann(wrap(ct, ft[1:]), f.names, cs)
        rest_u = _rename_ann(wrap(cu, before + fu[j + 1 :]), g.names, cs)
        ct2, ft2 = peel(rest_t)
        cu2, fu2 = peel(rest_u)
        if len(ft2) == len(ft) - 1 and len(fu2) == len(fu) - 1 and _match_chain(ft2, ct2, fu2, cu2):
            return True
    return False
