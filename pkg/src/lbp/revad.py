"""Reverse-mode differentiation of higher-order terms.

``rev_term`` maps every real to a pair of its value and a backpropagator,
a linear map sending an output sensitivity to a vector of input
sensitivities.  It is homomorphic on the lambda-calculus constructs, so
abstractions, applications, pairs and lets are carried over unchanged.

``gradient`` seeds each input with a backpropagator named after its
position, normalizes, and decodes the tagged sum that comes out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ._deep import deep
from .graphad import MULT_DERIV, derivatives, deriv_term
from .rewrite import DEFAULT_RULES, ELL, normalize, peel, reduce_to_graph
from .semantics import LinV, RealV, eval as sem_eval, flatten, to_value
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
    fresh,
    grad_index,
    grad_name,
    has_neg,
    input_order,
    size,
    zero_vector,
)
from .typing import is_ground


class RevError(ValueError):
    """The term is outside the differentiable fragment."""


class ReadBackError(ValueError):
    """The normal form is not a sum of tagged numerals."""


def rev_type(ty: Type, d: int) -> Type:
    """R becomes R * Neg(d); products and arrows are kept."""
    if d < 1:
        raise RevError("dimension must be positive")
    if has_neg(ty):
        raise RevError("type already contains Neg")
    return _rev_ty(ty, Neg(d))


def _rev_ty(ty: Type, neg: Neg) -> Type:
    if isinstance(ty, Prod):
        return Prod(_rev_ty(ty.left, neg), _rev_ty(ty.right, neg))
    if isinstance(ty, Arrow):
        return Arrow(_rev_ty(ty.dom, neg), _rev_ty(ty.cod, neg))
    return Prod(REAL, neg)


def rev_term(t: Term, d: int, share_args: bool = True) -> Term:
    """The reverse-gradient program of ``t`` relative to R^d.

    With ``share_args`` an argument variable that occurs several times in
    one sum, product or function call is destructured once, so its
    backpropagator is applied at each use and can be factored.
    """
    if d < 1:
        raise RevError("dimension must be positive")
    return deep(_Rev(d, share_args).rev)(t)


class _Rev:
    def __init__(self, d: int, share: bool):
        self.d = d
        self.neg = Neg(d)
        self.share = share

    def ty(self, ty: Type) -> Type:
        if has_neg(ty):
            raise RevError("binder type already contains Neg")
        return _rev_ty(ty, self.neg)

    def rev(self, t: Term) -> Term:
        if isinstance(t, Var):
            if t.ann is Ann.LIN:
                raise RevError(f"linear variable {t.name!r} in source term")
            return t
        if isinstance(t, Lam):
            if t.ann is Ann.LIN:
                raise RevError("linear abstraction in source term")
            return Lam(t.var, Ann.EXP, self.ty(t.ty), self.rev(t.body))
        if isinstance(t, App):
            return App(self.rev(t.fun), self.rev(t.arg))
        if isinstance(t, Pair):
            return Pair(self.rev(t.fst), self.rev(t.snd))
        if isinstance(t, LetPair):
            return LetPair(t.x, self.ty(t.xty), t.y, self.ty(t.yty), self.rev(t.bound), self.rev(t.body))
        if isinstance(t, ESub):
            if t.ann is Ann.LIN:
                raise RevError("linear substitution in source term")
            return ESub(t.var, Ann.EXP, self.ty(t.ty), self.rev(t.bound), self.rev(t.body))
        if isinstance(t, Num):
            a = fresh("a")
            return Pair(t, Lam(a, Ann.LIN, REAL, zero_vector(self.d)))
        if isinstance(t, Sum):
            return self.op(t, [t.left, t.right], None)
        if isinstance(t, Mult):
            return self.op(t, [t.left, t.right], MULT_DERIV)
        if isinstance(t, FunApp):
            try:
                entries = derivatives(t.sym)
            except ValueError as exc:
                raise RevError(str(exc)) from None
            return self.op(t, list(t.args), entries)
        raise RevError(f"not a source term: {t!r}")

    def op(self, t: Term, args: list, entries) -> Term:
        """``let (x_i, x_i*) = rev(t_i) ... in (op(x), lin a. sum_i x_i* (d_i op(x) * a))``."""
        binds: list = []  # (x, xs, rev of the argument)
        xs: list = []
        seen: dict = {}
        for arg in args:
            key = arg.name if (self.share and isinstance(arg, Var)) else None
            if key is not None and key in seen:
                xs.append(seen[key])
                continue
            x, xstar = fresh("x"), fresh("xs")
            binds.append((x, xstar, self.rev(arg)))
            pair = (Var(x), Var(xstar))
            xs.append(pair)
            if key is not None:
                seen[key] = pair
        vals = [p[0] for p in xs]
        a = fresh("a")
        if isinstance(t, Sum):
            primal: Term = Sum(vals[0], vals[1])
            terms = [App(p[1], Var(a, Ann.LIN)) for p in xs]
        else:
            primal = Mult(vals[0], vals[1]) if isinstance(t, Mult) else FunApp(t.sym, vals)
            terms = [App(p[1], Mult(deriv_term(e, vals), Var(a, Ann.LIN))) for e, p in zip(entries, xs)]
        back: Term = terms[0]
        for u in terms[1:]:
            back = Sum(back, u)
        out: Term = Pair(primal, Lam(a, Ann.LIN, REAL, back))
        # the first argument's binding is innermost
        for x, xstar, bound in binds:
            out = LetPair(x, REAL, xstar, self.neg, bound, out)
        return out


# ---------------------------------------------------------------- read-back


@dataclass
class TaggedSum:
    """Backpropagator names with numeral coefficients, in order of appearance."""

    entries: list = field(default_factory=list)

    def dense(self, n: int) -> list[float]:
        out = [0.0] * n
        for name, g in self.entries:
            j = grad_index(name)
            if j is None or not 1 <= j <= n:
                raise ReadBackError(f"{name} is not a backpropagator of {n} inputs")
            out[j - 1] += g
        return out


def tagged_sum(nf: Term) -> TaggedSum:
    """Parse a normal form of shape sum_j x_j* g_j (zero vectors allowed)."""
    out = TaggedSum()
    stack = [nf]
    while stack:
        t = stack.pop()
        t, frames = peel(t)
        for f in frames:
            if not isinstance(f.bound, Num):
                raise ReadBackError("residual substitution of a non-numeral")
        if isinstance(t, Sum):
            stack.append(t.right)
            stack.append(t.left)
        elif isinstance(t, App) and isinstance(t.fun, Var) and isinstance(t.arg, Num):
            if grad_index(t.fun.name) is None:
                raise ReadBackError(f"{t.fun.name} is not a backpropagator")
            out.entries.append((t.fun.name, t.arg.value))
        elif _is_zero_vector(t):
            continue
        else:
            raise ReadBackError(f"unexpected subterm {t}")
    return out


def _is_zero_vector(t: Term) -> bool:
    while isinstance(t, Pair):
        if not _is_zero_vector(t.fst):
            return False
        t = t.snd
    return isinstance(t, Num) and t.value == 0.0


def read_back(nf: Term, n: int) -> list[float]:
    """Dense gradient from a tagged sum, by accumulation."""
    return tagged_sum(nf).dense(n)


def _eval_back(nf: Term, n: int) -> list[float]:
    """Gradient by evaluating with each backpropagator bound to its injection."""
    env = {}
    for j in range(1, n + 1):
        env[grad_name(j)] = LinV(lambda a, j=j: to_value([a if i == j else 0.0 for i in range(1, n + 1)]))
    v = sem_eval(nf, env)
    if isinstance(v, RealV) and n == 1:
        return [v.value]
    return flatten(v)


# ---------------------------------------------------------------- pipeline


@dataclass
class RevConfig:
    rules: frozenset = DEFAULT_RULES
    strategy: str = "bottom_up"
    fuel: int | None = None
    # differentiate the ground reduct instead of the term itself
    prereduce: bool = False
    share_args: bool = True

    def without_factoring(self) -> "RevConfig":
        return RevConfig(self.rules - ELL, self.strategy, self.fuel, self.prereduce, self.share_args)


@dataclass
class GradReport:
    value: float
    gradient: list
    steps: dict
    m: int
    sizeG: int
    fallback: bool
    duplications: int = 0
    rule_counts: dict = field(default_factory=dict)
    normal_form: Term | None = None

    @property
    def total_steps(self) -> int:
        return sum(self.steps.values())

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "gradient": list(self.gradient),
            "steps": {k: self.steps.get(k, 0) for k in ("beta", "ell", "fn", "structural")},
            "m": self.m,
            "sizeG": self.sizeG,
            "fallback": self.fallback,
        }


def gradient_term(t: Term, inputs: Sequence[str], point: Sequence[float] | None, cfg: RevConfig | None = None) -> Term:
    """``let (z, z*) = rev(t)[x_i <- (x_i, lin a. x_i* a)] in z* 1``, inputs bound to the point."""
    cfg = cfg or RevConfig()
    n = len(inputs)
    rt = rev_term(t, n, cfg.share_args)
    rty = rev_type(REAL, n)
    body = rt
    for j in range(n, 0, -1):
        x = inputs[j - 1]
        a = fresh("a")
        seed = Pair(Var(x), Lam(a, Ann.LIN, REAL, App(Var(grad_name(j)), Var(a, Ann.LIN))))
        body = ESub(x, Ann.EXP, rty, seed, body)
    z, zs = fresh("z"), fresh("zs")
    out: Term = LetPair(z, REAL, zs, Neg(n), body, App(Var(zs), Num(1.0)))
    if point is not None:
        for j in range(n, 0, -1):
            out = ESub(inputs[j - 1], Ann.EXP, REAL, Num(point[j - 1]), out)
    return out


def grad_context(n: int) -> dict:
    return {grad_name(j): Neg(n) for j in range(1, n + 1)}


def gradient(
    t: Term,
    point: Sequence[float],
    cfg: RevConfig | None = None,
    inputs: Sequence[str] | None = None,
) -> tuple[list[float], GradReport]:
    """Gradient of ``t`` at ``point`` by reverse differentiation and normalization."""
    cfg = cfg or RevConfig()
    names = list(inputs) if inputs is not None else input_order(t)
    n = len(names)
    if len(point) != n:
        raise ValueError(f"point has {len(point)} coordinates, term has {n} inputs")
    env = dict(zip(names, point))
    value_v = sem_eval(t, env)
    value = value_v.value if isinstance(value_v, RealV) else float("nan")

    graph, ptrace = reduce_to_graph(t, cfg.fuel)
    m, size_g = ptrace.total, size(graph)
    if not is_ground(graph):
        raise RevError("term does not reduce to a computational graph (is it of type R?)")
    if n == 0:
        return [], GradReport(value, [], {"beta": 0, "ell": 0, "fn": 0, "structural": 0}, m, size_g, False)

    source = graph if cfg.prereduce else t
    term = gradient_term(source, names, point, cfg)
    nf, trace = normalize(term, cfg.rules, cfg.strategy, cfg.fuel, grad_context(n))
    fallback = False
    try:
        grad = read_back(nf, n)
    except ReadBackError:
        grad = _eval_back(nf, n)
        fallback = True
    report = GradReport(
        value=value,
        gradient=grad,
        steps=trace.by_class(),
        m=m,
        sizeG=size_g,
        fallback=fallback,
        duplications=trace.duplications,
        rule_counts={str(k): v for k, v in trace.rule_counts.items()},
        normal_form=nf,
    )
    return grad, report
