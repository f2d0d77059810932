"""Cross-checks between the differentiation routes, plus the example corpus.

Four independent routes compute a gradient: normalizing the reverse
program, numeric backpropagation on the ground reduct, a forward sweep of
dual numbers, and finite differences of the evaluator.  The helpers here
generate terms, compare the routes and fit step counts.  The bounded
searches at the end test the rewriting metatheory on small terms.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .functions import registry
from .graphad import bp_numeric, fwd_numeric, fwd_symbolic
from .revad import RevConfig, gradient, rev_term, rev_type
from .rewrite import (
    BETA,
    DEFAULT_RULES,
    ETA,
    REDUCTIONS,
    SHRINKING,
    STRATEGIES,
    STRUCTURAL,
    FuelExhausted,
    RuleId,
    apply,
    env_at,
    equivalent,
    find_redexes,
    normalize,
    reduce_to_graph,
    struct_moves,
    struct_step,
)
from .semantics import EvalError, eval as sem_eval, flatten, function_of
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
    Num,
    Pair,
    Prod,
    Sum,
    Term,
    Type,
    Var,
    alpha_eq,
    desugar_funapp,
    fresh,
    fv,
    input_order,
    is_value,
    parse,
    size,
    subterm,
)
from .typing import LbpTypeError, infer, is_ground

R = RuleId


class ValidationError(ValueError):
    """Bad input to a validation helper."""


# ---------------------------------------------------------------- tolerances


def agree(a: float, b: float, rel: float = 1e-5, abs_tol: float = 1e-7) -> bool:
    """|a - b| within rel of the larger magnitude, or within abs_tol."""
    if not (math.isfinite(a) and math.isfinite(b)):
        return False
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol)


def agree_vec(a: Sequence[float], b: Sequence[float], rel: float = 1e-5, abs_tol: float = 1e-7) -> bool:
    return len(a) == len(b) and all(agree(x, y, rel, abs_tol) for x, y in zip(a, b))


# ---------------------------------------------------------------- oracles


def finite_diff(t: Term, point: Sequence[float], h: float | None = None, inputs=None) -> list[float]:
    """Central differences of the evaluator, one coordinate at a time.

    The default step is 1e-4 * max(1, |r_i|).
    """
    names = list(inputs) if inputs is not None else input_order(t)
    if len(names) != len(point):
        raise ValidationError(f"point has {len(point)} coordinates, term has {len(names)} inputs")
    f = function_of(t, names)
    r = [float(x) for x in point]
    out = []
    for i, ri in enumerate(r):
        hi = h if h is not None else 1e-4 * max(1.0, abs(ri))
        up, down = list(r), list(r)
        up[i], down[i] = ri + hi, ri - hi
        out.append((f(up) - f(down)) / (2.0 * hi))
    return out


def extrapolated_diff(t: Term, point: Sequence[float], inputs=None) -> list[float]:
    """Central differences refined by Ridders' extrapolation, for tight comparisons."""
    names = list(inputs) if inputs is not None else input_order(t)
    f = function_of(t, names)
    r = [float(x) for x in point]
    return [ridders(lambda x, i=i: f(r[:i] + [x] + r[i + 1 :]), r[i])[0] for i in range(len(r))]


def ridders(f: Callable[[float], float], x: float, h: float | None = None, ntab: int = 10, shrink: float = 1.4):
    """Derivative of a real function at x and an error estimate.

    Central differences with a shrinking step are extrapolated to zero
    step in a Neville tableau; the entry with the smallest estimated
    error wins.
    """
    scale = max(1.0, abs(x))
    steps = [h] if h is not None else [1e-3 * scale, 1e-4 * scale, 1e-2 * scale]
    best = (math.nan, math.inf)
    for h0 in steps:
        try:
            d, err = _ridders(f, x, h0, ntab, shrink)
        except EvalError:
            # the first steps left the domain of the function
            continue
        if err < best[1]:
            best = (d, err)
        if err <= 1e-9 * max(1.0, abs(d)):
            break
    return best


def _ridders(f, x, h, ntab, shrink):
    c2 = shrink * shrink
    a = [[0.0] * ntab for _ in range(ntab)]
    a[0][0] = (f(x + h) - f(x - h)) / (2.0 * h)
    best, err = a[0][0], math.inf
    for i in range(1, ntab):
        h /= shrink
        a[0][i] = (f(x + h) - f(x - h)) / (2.0 * h)
        fac = c2
        for j in range(1, i + 1):
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0)
            fac *= c2
            e = max(abs(a[j][i] - a[j - 1][i]), abs(a[j][i] - a[j - 1][i - 1]))
            if e <= err:
                err, best = e, a[j][i]
        if abs(a[i][i] - a[i - 1][i - 1]) >= 2.0 * err:
            break
    return best, err


def _sigmoid(x: float) -> float:
    return registry()["sigmoid"](x)


def rnn_recurrence_oracle(a_vals: Sequence[float], e: float, r: float, literal: bool = False) -> tuple[float, float]:
    """Partial derivatives of the folded recurrent cell in e and r.

    The list is folded from its last element, so the recurrence runs over
    a_n, ..., a_1; the r-derivative uses the state before each update.
    ``literal`` instead runs over a_1, ..., a_n and uses the state after the
    update; it disagrees with finite differences once the list has two items.
    """
    seq = list(a_vals) if literal else list(reversed(a_vals))
    u = ge = gr = 0.0
    for a in seq:
        pre = e * a + r * u
        s = _sigmoid(pre)
        ds = s * (1.0 - s)
        new_u = s
        ge = ds * (a + r * ge)
        gr = ds * ((new_u if literal else u) + r * gr)
        u = new_u
    return ge, gr


def complexity_fit(samples) -> tuple[float, float, float]:
    """Least-squares fit of steps against m + |G|.

    ``samples`` holds (k, steps, m, sizeG) tuples.  Returns the slope, the
    intercept and the largest residual relative to the observed steps.
    """
    samples = list(samples)
    if len(samples) < 4:
        raise ValidationError("need at least 4 samples")
    x = np.array([float(s[2] + s[3]) for s in samples])
    y = np.array([float(s[1]) for s in samples])
    if np.ptp(x) == 0 or np.any(y <= 0):
        raise ValidationError("degenerate sample set")
    design = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = np.abs(y - (a * x + b)) / y
    return float(a), float(b), float(resid.max())


# ---------------------------------------------------------------- corpus


SQUARE_SIN = "let z1 = sub(x1, x2) in let z2 = z1 * z1 in sin(z2)"
SQUARE_SIN_BACKPROP = (
    "let z1 = sub(x1, x2) in let z2 = z1 * z1 in let b = cos(z2) * a in "
    "let c = z1 * b + z1 * b in (sin(z2), (1 * c, -1 * c))"
)
POLY_BUILDER = r"\n:(R -> R) -> R -> R. \x. n (\y. w * y + x) x"


def church(n: int) -> str:
    body = "x"
    for _ in range(n):
        body = f"f ({body})"
    return rf"(\f:R -> R. \x. {body})"


def church_list(items: Sequence[str]) -> str:
    """A list as its right fold: f a1 (f a2 (... (f an x)))."""
    body = "x"
    for a in reversed(items):
        body = f"f ({a}) ({body})"
    return rf"(\f:R -> R -> R. \x. {body})"


def _num(v: float) -> str:
    return repr(float(v))


def square_sin() -> Term:
    return parse(SQUARE_SIN)


def square_sin_backprop() -> Term:
    """The backpropagation term of the square_sin graph, seed named a."""
    return parse(SQUARE_SIN_BACKPROP)


def church_poly(n: int = 2) -> Term:
    """``t n x`` with t building y -> w*y + x n times; inputs (w, x)."""
    return parse(f"({POLY_BUILDER}) {church(n)} x")


RNN_CELL = r"\x. \h. sigmoid(e * x + r * h)"


def rnn(a_vals: Sequence[float]) -> Term:
    """The recurrent cell folded over a list of numerals; inputs (e, r)."""
    lst = church_list([_num(a) for a in a_vals])
    return parse(rf"(\l:(R -> R -> R) -> R -> R. l ({RNN_CELL}) 0) {lst}")


def _iterate(k: int, body: str) -> Term:
    call = "x1"
    for _ in range(k):
        call = f"f ({call})"
    return parse(rf"let f : R -> R = \u. let z = sub(u, x2) in {body} in {call}")


def chain(k: int) -> Term:
    """k calls of one let-bound function; inputs (x1, x2)."""
    return _iterate(k, "sin(z * z)")


def shared(k: int) -> Term:
    """Like ``chain`` without the outer sine, so values stay polynomial."""
    return _iterate(k, "z * z")


def sum_of_squares(n: int) -> Term:
    return parse(" + ".join(f"x{i} * x{i}" for i in range(1, n + 1)))


@dataclass
class Example:
    name: str
    term: Term
    inputs: list
    domain: tuple = (0.1, 3.0)


@dataclass
class Corpus:
    """Named example terms and seeded generators."""

    seed: int = 0
    examples: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.examples:
            for ex in default_examples():
                self.examples[ex.name] = ex

    def __iter__(self):
        return iter(self.examples.values())

    def __getitem__(self, name: str) -> Example:
        return self.examples[name]

    def ground_terms(self, count: int, n_inputs: int = 3) -> list:
        rng = random.Random(self.seed)
        return [random_ground(rng, n_inputs) for _ in range(count)]

    def combinator_terms(self, count: int) -> list:
        rng = random.Random(self.seed)
        return [random_combinator(rng) for _ in range(count)]


def default_examples() -> list:
    out = [
        Example("square_sin", square_sin(), ["x1", "x2"]),
        Example("church_poly", church_poly(2), ["w", "x"]),
        Example("chain4", chain(4), ["x1", "x2"], (0.1, 1.0)),
        Example("shared3", shared(3), ["x1", "x2"], (0.1, 1.0)),
        Example("sum_of_squares4", sum_of_squares(4), [f"x{i}" for i in range(1, 5)]),
    ]
    a_vals = [0.5, -1.0, 0.25, 2.0]
    out.append(Example("rnn4", rnn(a_vals), ["e", "r"], (0.1, 1.0)))
    return out


def random_point(rng: random.Random, n: int, lo: float = 0.1, hi: float = 3.0) -> list:
    """Coordinates with |r| in [lo, hi] and random sign."""
    return [rng.choice((-1.0, 1.0)) * rng.uniform(lo, hi) for _ in range(n)]


# ---------------------------------------------------------------- ground generator

UNARY = ("sin", "cos", "tanh", "sigmoid", "exp", "log", "relu")


@dataclass
class GroundConfig:
    max_depth: int = 8
    fanout: int = 3
    max_size: int = 200
    leaf_prob: float = 0.25
    let_prob: float = 0.25


def random_ground(rng: random.Random, n_inputs: int = 3, cfg: GroundConfig | None = None) -> Term:
    """A seeded computational graph over some of x1..xn, of size at most max_size."""
    cfg = cfg or GroundConfig()
    names = [f"x{i}" for i in range(1, n_inputs + 1)]
    while True:
        t = _ground(rng, cfg, cfg.max_depth, list(names))
        if size(t) <= cfg.max_size and fv(t):
            return t


def _ground(rng: random.Random, cfg: GroundConfig, depth: int, scope: list) -> Term:
    if depth <= 0 or rng.random() < cfg.leaf_prob:
        if rng.random() < 0.85:
            return Var(rng.choice(scope))
        return Num(float(rng.choice((0.5, 1.0, 2.0, -1.5, 3.0))))
    kind = rng.random()
    if kind < cfg.let_prob:
        z = fresh("z")
        bound = _ground(rng, cfg, depth - 1, scope)
        body = _ground(rng, cfg, depth - 1, scope + [z, z])
        return ESub(z, Ann.EXP, REAL, bound, body)
    kind = rng.random()
    if kind < 0.3:
        return Sum(_ground(rng, cfg, depth - 1, scope), _ground(rng, cfg, depth - 1, scope))
    if kind < 0.55:
        return Mult(_ground(rng, cfg, depth - 1, scope), _ground(rng, cfg, depth - 1, scope))
    if kind < 0.65:
        return desugar_funapp("sub", [_ground(rng, cfg, depth - 1, scope), _ground(rng, cfg, depth - 1, scope)])
    return desugar_funapp(rng.choice(UNARY), [_ground(rng, cfg, depth - 1, scope)])


def well_conditioned(t: Term, point: Sequence[float], inputs=None, bound: float = 1e2) -> bool:
    """No overflow or domain trouble at ``point`` and nearby.

    Rejects log near or below zero, relu near its kink and values or
    intermediate results larger than ``bound``.
    """
    names = list(inputs) if inputs is not None else input_order(t)
    env = dict(zip(names, (float(r) for r in point)))
    try:
        return _checked(t, env, bound) is not None
    except (OverflowError, ValueError, ZeroDivisionError):
        return False


def _checked(t: Term, env: dict, bound: float):
    if isinstance(t, Num):
        return t.value
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, ESub):
        v = _checked(t.bound, env, bound)
        if v is None:
            return None
        inner = dict(env)
        inner[t.var] = v
        return _checked(t.body, inner, bound)
    if isinstance(t, (Sum, Mult)):
        a = _checked(t.left, env, bound)
        b = _checked(t.right, env, bound)
        if a is None or b is None:
            return None
        out = a + b if isinstance(t, Sum) else a * b
    elif isinstance(t, FunApp):
        xs = [_checked(a, env, bound) for a in t.args]
        if any(x is None for x in xs):
            return None
        if t.sym == "log" and xs[0] < 1e-2:
            return None
        if t.sym in ("relu", "step") and abs(xs[0]) < 1e-2:
            return None
        if t.sym == "exp" and xs[0] > 10.0:
            return None
        out = registry()[t.sym](*xs)
    else:
        raise ValidationError(f"not a ground term: {t}")
    if not math.isfinite(out) or abs(out) > bound:
        return None
    return out


# ---------------------------------------------------------------- combinator generator

BOUNDED = ("sin", "cos", "tanh", "sigmoid")
COMB_INPUTS = ("x1", "x2", "x3")


def _poly(rng: random.Random, atoms: list, depth: int) -> str:
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.8:
            return rng.choice(atoms)
        return _num(rng.choice((0.5, 1.0, 2.0, -1.0)))
    op = rng.choice(("+", "*", "sub"))
    a, b = _poly(rng, atoms, depth - 1), _poly(rng, atoms, depth - 1)
    if op == "sub":
        return f"sub({a}, {b})"
    return f"({a} {op} {b})"


def _unary(rng: random.Random) -> str:
    y = fresh("y")
    body = _poly(rng, [y, y] + list(COMB_INPUTS), 2)
    return rf"(\{y}. {rng.choice(BOUNDED)}({body}))"


def _binary(rng: random.Random) -> str:
    y, acc = fresh("y"), fresh("acc")
    body = _poly(rng, [y, acc, acc] + list(COMB_INPUTS), 2)
    return rf"(\{y}. \{acc}. {rng.choice(BOUNDED)}({body}))"


def _comb(rng: random.Random, depth: int) -> str:
    if depth <= 0:
        return _poly(rng, list(COMB_INPUTS), 2)
    kind = rng.randrange(6)
    sub = lambda: _comb(rng, depth - 1)  # noqa: E731
    if kind == 0:
        return f"{church(rng.randint(0, 5))} {_unary(rng)} ({sub()})"
    if kind == 1:
        items = [sub() if rng.random() < 0.3 else _poly(rng, list(COMB_INPUTS), 1) for _ in range(rng.randint(0, 5))]
        return f"{church_list(items)} {_binary(rng)} ({sub()})"
    if kind == 2:
        v = fresh("v")
        fn = rng.choice(BOUNDED)
        return f"let {v} = {sub()} in {fn}({v} * {v} + {v})"
    if kind == 3:
        f = fresh("g")
        return f"let {f} : R -> R = {_unary(rng)} in {f} ({f} ({sub()}))"
    if kind == 4:
        return rf"(\f:R -> R. \g:R -> R. \u. f (g u)) {_unary(rng)} {_unary(rng)} ({sub()})"
    return f"{rng.choice(BOUNDED)}({sub()}) + {_poly(rng, list(COMB_INPUTS), 1)}"


def random_combinator(rng: random.Random, depth: int = 3) -> Term:
    """A higher-order term of type R over x1, x2, x3.

    Built from Church numerals up to 5, folds over lists of length up to
    5, let-shared values and function composition.  A small anchor term
    makes all three inputs occur, in order.
    """
    while True:
        text = _comb(rng, depth)
        t = parse(f"let anchor = x1 * x2 * x3 in ({text}) + 0.001 * anchor")
        if size(t) <= 600:
            return t


# ---------------------------------------------------------------- route comparison


@dataclass
class RouteResult:
    point: list
    rev: list
    bp: list
    fwd: list
    fd: list
    ok: bool
    report: object = None


def compare_routes(t: Term, point: Sequence[float], inputs=None, rel: float = 1e-5, cfg: RevConfig | None = None) -> RouteResult:
    """Gradient of ``t`` at ``point`` by all four routes, with pairwise agreement."""
    names = list(inputs) if inputs is not None else input_order(t)
    graph, _ = reduce_to_graph(t)
    rev, report = gradient(t, point, cfg, names)
    _, bp = bp_numeric(graph, point, names)
    fwd = [fwd_numeric(graph, point, j, names)[1] for j in range(1, len(names) + 1)]
    fd = extrapolated_diff(t, point, names)
    routes = (rev, bp, fwd, fd)
    ok = all(agree_vec(a, b, rel) for i, a in enumerate(routes) for b in routes[i + 1 :])
    return RouteResult(list(point), rev, bp, fwd, fd, ok, report)


def conditioned_points(rng: random.Random, t: Term, count: int, inputs=None, domain=(0.1, 3.0), tries: int = 200) -> list:
    """Points where the term evaluates without overflow or domain trouble."""
    names = list(inputs) if inputs is not None else input_order(t)
    graph = reduce_to_graph(t)[0] if not is_ground(t) else t
    out = []
    for _ in range(tries):
        if len(out) == count:
            break
        p = random_point(rng, len(names), *domain)
        if well_conditioned(graph, p, names):
            out.append(p)
    return out


def conditioned_ground(rng: random.Random, points: int = 5, n_inputs: int = 3) -> tuple:
    """A random graph together with ``points`` well-conditioned points."""
    while True:
        g = random_ground(rng, n_inputs)
        pts = conditioned_points(rng, g, points)
        if len(pts) == points:
            return g, pts


# ---------------------------------------------------------------- small typed terms

SMALL_TYPES = (REAL, Prod(REAL, REAL), Arrow(REAL, REAL))


class SourceGen:
    """Random well-typed source terms over inputs of type R.

    Redexes are planted on purpose: applied abstractions, destructured
    pairs, lets of values and sums or products of numerals.
    """

    def __init__(self, rng: random.Random, inputs: Sequence[str] = ("x1", "x2"), depth: int = 3, numerals: bool = True):
        self.rng = rng
        self.inputs = list(inputs)
        self.depth = depth
        self.numerals = numerals

    def term(self, ty: Type = REAL, max_size: int = 25) -> Term:
        env = [(x, REAL) for x in self.inputs]
        while True:
            t = self.gen(ty, env, self.depth)
            if size(t) <= max_size:
                return t

    def num(self) -> Num:
        return Num(float(self.rng.choice((0.0, 0.5, 1.0, 2.0, 3.0, -1.0))))

    def leaf(self, ty: Type, env) -> Term:
        vs = [x for x, t in env if t == ty]
        if vs and self.rng.random() < 0.7:
            return Var(self.rng.choice(vs))
        if isinstance(ty, Prod):
            return Pair(self.leaf(ty.left, env), self.leaf(ty.right, env))
        if isinstance(ty, Arrow):
            y = fresh("y")
            return Lam(y, Ann.EXP, ty.dom, self.leaf(ty.cod, env + [(y, ty.dom)]))
        return self.num()

    def gen(self, ty: Type, env, d: int) -> Term:
        rng = self.rng
        if d <= 0 or rng.random() < 0.15:
            return self.leaf(ty, env)
        kinds = ["let", "app", "letpair"]
        if ty == REAL:
            kinds += ["sum", "mult", "fun", "sum", "mult", "arith"]
        elif isinstance(ty, Prod):
            kinds += ["pair", "pair"]
        else:
            kinds += ["lam", "lam"]
        kind = rng.choice(kinds)
        if kind == "let":
            b = rng.choice(SMALL_TYPES)
            x = fresh("v")
            bound = self.gen(b, env, d - 1) if rng.random() < 0.5 else self.leaf(b, env)
            return ESub(x, Ann.EXP, b, bound, self.gen(ty, env + [(x, b)], d - 1))
        if kind == "app":
            b = rng.choice((REAL, REAL, Prod(REAL, REAL)))
            x = fresh("p")
            fun = Lam(x, Ann.EXP, b, self.gen(ty, env + [(x, b)], d - 1))
            return App(fun, self.gen(b, env, d - 1))
        if kind == "letpair":
            x, y = fresh("l"), fresh("r")
            bound = self.gen(Prod(REAL, REAL), env, d - 1)
            return LetPair(x, REAL, y, REAL, bound, self.gen(ty, env + [(x, REAL), (y, REAL)], d - 1))
        if kind in ("sum", "mult"):
            cls = Sum if kind == "sum" else Mult
            return cls(self.gen(REAL, env, d - 1), self.gen(REAL, env, d - 1))
        if kind == "arith":
            cls = rng.choice((Sum, Mult))
            return cls(self.num(), self.num())
        if kind == "fun":
            sym = rng.choice(("sin", "cos", "tanh", "sigmoid", "sub"))
            arity = registry()[sym].arity
            arg = self.gen(REAL, env, d - 1)
            if rng.random() < 0.5:
                # an applied function of R keeps higher-order redexes nearby
                y = fresh("y")
                return App(Lam(y, Ann.EXP, REAL, desugar_funapp(sym, [Var(y)] * arity)), arg)
            return desugar_funapp(sym, [arg] + [self.leaf(REAL, env) for _ in range(arity - 1)])
        if kind == "pair":
            return Pair(self.gen(ty.left, env, d - 1), self.gen(ty.right, env, d - 1))
        y = fresh("y")
        return Lam(y, Ann.EXP, ty.dom, self.gen(ty.cod, env + [(y, ty.dom)], d - 1))


def close(t: Term, point: Sequence[float], inputs=None) -> Term:
    """Bind the inputs of ``t`` to numerals with outer lets."""
    names = list(inputs) if inputs is not None else input_order(t)
    for x, r in reversed(list(zip(names, point))):
        t = ESub(x, Ann.EXP, REAL, Num(float(r)), t)
    return t


# ---------------------------------------------------------------- metatheory checks


def structurally_equal(a: Term, b: Term) -> bool:
    return equivalent(a, b)


def _safe_type(ctx, t: Term):
    try:
        return infer(ctx, t)
    except LbpTypeError:
        return None


def check_subject_reduction(t: Term, ctx, rng: random.Random, rules=REDUCTIONS) -> tuple[bool, str]:
    """One random redex and one random structural move keep the type."""
    ty = infer(ctx, t)
    redexes = find_redexes(t, rules, _neg_ctx(ctx))
    if redexes:
        rule, at = rng.choice(redexes)
        u = apply(t, rule, at, _neg_ctx(ctx))
        got = _safe_type(ctx, u)
        if got != ty:
            return False, f"{rule} at {at}: {ty} became {got}"
    moves = struct_moves(t)
    if moves:
        rule, at, direction = rng.choice(moves)
        u = struct_step(t, rule, at, direction)
        got = _safe_type(ctx, u)
        if got != ty:
            return False, f"{rule} {direction} at {at}: {ty} became {got}"
    return True, ""


def _neg_ctx(ctx):
    env = ctx.env if hasattr(ctx, "env") else dict(ctx or {})
    return dict(env)


def check_normal_forms_are_values(t: Term) -> tuple[bool, str]:
    """A closed term normalizes to a value."""
    nf, _ = normalize(t, DEFAULT_RULES, "bottom_up")
    if is_value(nf):
        return True, ""
    return False, f"normal form is not a value: {nf}"


def check_termination(t: Term, ctx=None, fuel: int = 20000) -> tuple[bool, str]:
    try:
        normalize(t, DEFAULT_RULES, "bottom_up", fuel, ctx)
    except FuelExhausted:
        return False, f"no normal form within {fuel} steps"
    return True, ""


def random_reduction(t: Term, rng: random.Random, rules, fuel: int = 100000, ctx=None) -> tuple[Term, int]:
    """Reduce with a uniformly random redex at each step."""
    steps = 0
    while True:
        redexes = find_redexes(t, rules, ctx)
        if not redexes:
            return t, steps
        if steps >= fuel:
            raise ValidationError("random reduction did not stop")
        rule, at = rng.choice(redexes)
        t = apply(t, rule, at, ctx)
        steps += 1


def check_shrinking_bound(t: Term, rng: random.Random) -> tuple[bool, str]:
    """Numeral and garbage steps alone take at most twice the size."""
    _, steps = random_reduction(t, rng, SHRINKING)
    if steps <= 2 * size(t):
        return True, ""
    return False, f"{steps} steps for size {size(t)}"


def check_strategy_independence(t: Term, rel: float = 1e-9) -> tuple[bool, str]:
    """All strategies reach the same numerals from a closed ground-typed term."""
    results = []
    for strategy in STRATEGIES:
        nf, _ = normalize(t, DEFAULT_RULES, strategy)
        results.append(flatten(sem_eval(nf)))
    for other in results[1:]:
        if not agree_vec(results[0], other, rel, 0.0):
            return False, f"strategies disagree: {results}"
    return True, ""


def _steps(t: Term, rules=DEFAULT_RULES, ctx=None) -> list:
    out = []
    for rule, at in find_redexes(t, rules, ctx):
        out.append((rule, at, apply(t, rule, at, ctx)))
    return out


# structural moves the bisimulation and postponement checks sample from
MOBILITY = STRUCTURAL - {R.R31}


def check_bisimulation(t: Term, rng: random.Random, ctx=None, allowed=MOBILITY) -> tuple[bool, str]:
    """A step from t is matched by a step of the same rule from an equivalent term."""
    moves = struct_moves(t, allowed)
    steps = _steps(t, ctx=ctx)
    if not moves or not steps:
        return True, "vacuous"
    rule, at, direction = rng.choice(moves)
    t2 = struct_step(t, rule, at, direction)
    r1, p1, u = rng.choice(steps)
    for r2, _, u2 in _steps(t2, ctx=ctx):
        if r2 == r1 and structurally_equal(u, u2):
            return True, ""
    return False, f"{r1} at {p1} not matched after {rule} {direction} at {at}"


def check_postponement(t: Term, rng: random.Random, ctx=None, allowed=MOBILITY) -> tuple[bool, str]:
    """Two steps interleaved with structural moves can be done without them."""
    cur = t
    rules_used = []
    for _ in range(2):
        moves = struct_moves(cur, allowed)
        if moves:
            rule, at, direction = rng.choice(moves)
            cur = struct_step(cur, rule, at, direction)
        steps = _steps(cur, ctx=ctx)
        if not steps:
            return True, "vacuous"
        r, _, cur = rng.choice(steps)
        rules_used.append(r)
    for _, _, a in _steps(t, ctx=ctx):
        for _, _, b in _steps(a, ctx=ctx):
            if structurally_equal(b, cur):
                return True, ""
    return False, f"no two-step reduction reaches the target of {rules_used}"


# rules the image of a step may use, by source rule
_NUMERIC_IMAGE = frozenset({R.R18, R.R20, R.R21})


def commutation_rules(rule: RuleId) -> frozenset:
    """The rules allowed to simulate a step on the reverse image."""
    rule = RuleId(rule)
    if rule in (R.R23, R.R25):
        return _NUMERIC_IMAGE | {rule}
    if rule is R.R20n:
        # a numeral's image is a pair, which is substituted as a value
        return frozenset({R.R20, R.R20n})
    return frozenset({rule})


def reaches(start: Term, target: Term, rules, max_steps: int = 10, breadth: int = 2, ctx=None) -> int | None:
    """Length of a reduction from start to target (up to alpha) within bounds.

    Every sequence of up to ``breadth`` steps is tried, then each strategy
    is followed for up to ``max_steps`` steps.
    """
    if alpha_eq(start, target):
        return 0
    frontier = [start]
    for depth in range(1, min(breadth, max_steps) + 1):
        nxt = []
        for t in frontier:
            for _, _, u in _steps(t, rules, ctx):
                if alpha_eq(u, target):
                    return depth
                nxt.append(u)
        frontier = nxt
    for strategy in ("leftmost_outermost", "eager_factoring"):
        t = start
        for n in range(1, max_steps + 1):
            redexes = find_redexes(t, rules, ctx)
            if not redexes:
                break
            rule, at = redexes[0] if strategy == "leftmost_outermost" else _rightmost_innermost(redexes)
            t = apply(t, rule, at, ctx)
            if alpha_eq(t, target):
                return n
    return None


def _rightmost_innermost(redexes):
    return max(redexes, key=lambda r: len(r[1]))


def _redex_node(t: Term, rule: RuleId, at) -> tuple:
    """Path of the node a step rewrites (the binder for substitution steps)."""
    if rule in (R.R20, R.R20n):
        from .rewrite import _binder_of

        return _binder_of(t, at)
    return tuple(at)


@dataclass
class CommutationCase:
    rule: RuleId
    source: Term
    target: Term
    steps: int | None

    @property
    def ok(self) -> bool:
        return self.steps is not None


def check_commutation(t: Term, rng: random.Random, max_steps: int = 10, rules=BETA | ETA, ctx=None) -> CommutationCase | None:
    """Pick one step of ``t``; its reverse image must reach the image of the result.

    The search runs on the rewritten node alone, since the reverse
    transformation is compositional.  Free variables default to type R.
    """
    ctx = dict(ctx) if ctx is not None else {x: REAL for x in fv(t)}
    steps = find_redexes(t, rules, ctx)
    by_rule: dict = {}
    for rule, at in steps:
        by_rule.setdefault(rule, []).append(at)
    if not by_rule:
        return None
    rule = rng.choice(sorted(by_rule))
    at = tuple(rng.choice(by_rule[rule]))
    node_at = _redex_node(t, rule, at)
    node = subterm(t, node_at)
    local = env_at(t, node_at, ctx)
    contracted = apply(node, rule, at[len(node_at) :], local)
    src = rev_term(node, 1, share_args=False)
    tgt = rev_term(contracted, 1, share_args=False)
    rev_ctx = {x: rev_type(ty, 1) for x, ty in local.items()}
    n = reaches(src, tgt, commutation_rules(rule), max_steps, ctx=rev_ctx)
    return CommutationCase(rule, src, tgt, n)


def check_structural_image(t: Term, rng: random.Random) -> tuple[bool, str]:
    """A structural move on a term is a structural equivalence on its image."""
    moves = struct_moves(t)
    if not moves:
        return True, "vacuous"
    rule, at, direction = rng.choice(moves)
    u = struct_step(t, rule, at, direction)
    a, b = rev_term(t, 1, share_args=False), rev_term(u, 1, share_args=False)
    if structurally_equal(a, b):
        return True, ""
    return False, f"{rule} {direction} at {at}"


# ---------------------------------------------------------------- suites


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "checks": self.checks,
            "failures": self.failures[:10],
            "seconds": round(self.seconds, 3),
        }


def _suite(name: str, fn: Callable[[SuiteResult], None]) -> SuiteResult:
    res = SuiteResult(name, True)
    t0 = time.perf_counter()
    fn(res)
    res.seconds = time.perf_counter() - t0
    res.passed = not res.failures
    return res


def oracle_suite(seed: int = 0, ground: int = 200, points: int = 5, combinators: int = 100) -> SuiteResult:
    """Four-route agreement on the corpus, random graphs and random combinator terms."""

    def body(res: SuiteResult):
        rng = random.Random(seed)
        counts = {"corpus": 0, "ground": 0, "combinator": 0}
        for ex in Corpus(seed):
            for p in conditioned_points(rng, ex.term, 20, ex.inputs, ex.domain):
                r = compare_routes(ex.term, p, ex.inputs)
                counts["corpus"] += 1
                if not r.ok:
                    res.failures.append({"term": ex.name, "point": p, "rev": r.rev, "fd": r.fd})
        gen = random.Random(seed + 1)
        for i in range(ground):
            g, pts = conditioned_ground(gen, points)
            for p in pts:
                r = compare_routes(g, p)
                counts["ground"] += 1
                if not r.ok:
                    res.failures.append({"ground": i, "point": p, "rev": r.rev, "bp": r.bp, "fwd": r.fwd, "fd": r.fd})
        gen = random.Random(seed + 2)
        for i in range(combinators):
            t = random_combinator(gen)
            for p in conditioned_points(gen, t, 1):
                rev, _ = gradient(t, p)
                fd = extrapolated_diff(t, p)
                counts["combinator"] += 1
                if not agree_vec(rev, fd):
                    res.failures.append({"combinator": i, "point": p, "rev": rev, "fd": fd})
        res.checks = counts

    return _suite("oracles", body)


CHAIN_KS = (4, 8, 16, 32, 64)
SUM_NS = (8, 16, 32, 64)


def chain_samples(ks: Sequence[int] = CHAIN_KS, point=(0.3, 0.1)) -> list:
    out = []
    for k in ks:
        _, rep = gradient(chain(k), list(point))
        out.append((k, rep.total_steps, rep.m, rep.sizeG))
    return out


def sweep_ratio(n: int) -> tuple[int, int]:
    """Steps of a full forward sweep and of one reverse run on sum_of_squares(n)."""
    t = sum_of_squares(n)
    point = [0.5 + 0.01 * i for i in range(n)]
    fwd_steps = sum(fwd_symbolic(t, point, j)[2] for j in range(1, n + 1))
    _, rep = gradient(t, point)
    return fwd_steps, rep.total_steps


def complexity_suite(seed: int = 0) -> SuiteResult:
    def body(res: SuiteResult):
        samples = chain_samples()
        a, b, resid = complexity_fit(samples)
        res.checks["chain_fit"] = {"a": a, "b": b, "residual": resid, "samples": samples}
        if resid >= 0.10:
            res.failures.append({"chain_residual": resid})
        ratios = []
        for n in SUM_NS:
            f, r = sweep_ratio(n)
            ratios.append(f / r)
        res.checks["sweep_ratios"] = dict(zip(SUM_NS, ratios))
        if any(x >= y for x, y in zip(ratios, ratios[1:])) or ratios[-1] <= 5:
            res.failures.append({"ratios": ratios})

    return _suite("complexity", body)


def rnn_suite(seed: int = 0, max_len: int = 8) -> SuiteResult:
    def body(res: SuiteResult):
        rng = random.Random(seed)
        for n in range(1, max_len + 1):
            a_vals = [rng.uniform(-1.0, 1.0) for _ in range(n)]
            e, r = rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
            t = rnn(a_vals)
            rev, _ = gradient(t, [e, r])
            oracle = list(rnn_recurrence_oracle(a_vals, e, r))
            fd = extrapolated_diff(t, [e, r])
            res.checks[n] = {"rev": rev, "oracle": oracle}
            if not agree_vec(rev, oracle, 1e-9, 1e-12):
                res.failures.append({"n": n, "rev": rev, "oracle": oracle})
            if not agree_vec(rev, fd, 1e-6, 1e-9):
                res.failures.append({"n": n, "rev": rev, "fd": fd})

    return _suite("rnn", body)


def _sample(res: SuiteResult, name: str, make, check, instances: int, max_tries: int):
    """Run ``check`` on fresh instances until ``instances`` of them are not vacuous."""
    done = tries = 0
    while done < instances and tries < max_tries:
        tries += 1
        ok, msg = check(make())
        if msg == "vacuous":
            continue
        done += 1
        if not ok:
            res.failures.append({"check": name, "detail": msg})
    res.checks[name] = {"instances": done, "tries": tries}
    if done < instances:
        res.failures.append({"check": name, "detail": f"only {done} non-vacuous instances in {tries} tries"})


METATHEORY_INPUTS = ("x1", "x2")


def metatheory_suite(seed: int = 0, instances: int = 500) -> SuiteResult:
    """Typing, normalization and structural-equivalence properties on small random terms."""

    def body(res: SuiteResult):
        rng = random.Random(seed)
        gen = SourceGen(random.Random(seed + 1), METATHEORY_INPUTS)
        ctx = {x: REAL for x in METATHEORY_INPUTS}
        cap = 20 * instances

        def open_term():
            return gen.term(rng.choice(SMALL_TYPES))

        def closed_term(ty=None):
            point = random_point(rng, len(METATHEORY_INPUTS), -2.0, 2.0)
            return close(gen.term(ty or rng.choice(SMALL_TYPES)), point, METATHEORY_INPUTS)

        _sample(res, "subject_reduction", open_term, lambda t: check_subject_reduction(t, ctx, rng), instances, cap)
        _sample(res, "value", closed_term, check_normal_forms_are_values, instances, cap)
        _sample(res, "termination", open_term, lambda t: check_termination(t, ctx), instances, cap)
        _sample(res, "shrinking", lambda: closed_term(REAL), lambda t: check_shrinking_bound(t, rng), instances, cap)
        _sample(res, "strategies", lambda: closed_term(REAL), check_strategy_independence, instances, cap)
        _sample(res, "bisimulation", open_term, lambda t: check_bisimulation(t, rng, ctx), instances, cap)
        _sample(res, "postponement", open_term, lambda t: check_postponement(t, rng, ctx), instances, cap)

    return _suite("metatheory", body)


def commutation_suite(seed: int = 0, instances: int = 500, max_steps: int = 10) -> SuiteResult:
    """Single steps of source terms against reductions of their reverse images."""

    def body(res: SuiteResult):
        rng = random.Random(seed)
        gen = SourceGen(random.Random(seed + 1), METATHEORY_INPUTS)
        by_rule: dict = {}
        done = 0
        while done < instances:
            case = check_commutation(gen.term(rng.choice(SMALL_TYPES), max_size=20), rng, max_steps)
            if case is None:
                continue
            done += 1
            seen, failed = by_rule.get(str(case.rule), (0, 0))
            by_rule[str(case.rule)] = (seen + 1, failed + (not case.ok))
            if not case.ok:
                res.failures.append({"rule": str(case.rule), "source": str(case.source)})
        res.checks = {"instances": done, "by_rule": {k: {"sampled": a, "failed": b} for k, (a, b) in sorted(by_rule.items())}}

    return _suite("commutation", body)


SUITES = {
    "oracles": oracle_suite,
    "complexity": complexity_suite,
    "rnn": rnn_suite,
    "metatheory": metatheory_suite,
    "commutation": commutation_suite,
}


def run_suites(name: str = "all", seed: int = 0) -> list:
    if name == "all":
        return [fn(seed) for fn in SUITES.values()]
    if name not in SUITES:
        raise ValidationError(f"unknown suite {name!r}")
    return [SUITES[name](seed)]
