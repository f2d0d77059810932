"""First-order differentiation of ground terms (computational graphs).

A ground term is built from input variables, numerals, lets at type R,
function symbols, products and sums.  This module evaluates such terms
with dual numbers, transforms them symbolically into forward-mode
programs, runs numeric backpropagation over their hypergraph, and builds
the symbolic backpropagation term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ._deep import deep
from .functions import registry
from .rewrite import Frame, normalize, wrap
from .syntax import (
    REAL,
    Ann,
    ESub,
    FunApp,
    LetPair,
    Mult,
    Num,
    Pair,
    Prod,
    Sum,
    Term,
    Var,
    fresh,
    fv,
    input_order,
    tuple_items,
)
from .typing import is_ground

# Derivatives of the product, in the same shape as registry entries.
MULT_DERIV = ("#2", "#1")


class GraphADError(ValueError):
    """Non-ground input or a symbol without derivatives."""


@dataclass(frozen=True)
class DualNumber:
    primal: float
    tangent: float


@dataclass
class AdjointCell:
    primal: float
    adjoint: float = 0.0


def derivatives(sym: str) -> tuple:
    s = registry().get(sym)
    if s is None:
        raise GraphADError(f"unknown function symbol {sym!r}")
    if s.deriv is None:
        raise GraphADError(f"{sym} has no registered derivatives")
    return s.deriv


def deriv_value(entry, sym_args: Sequence[float]) -> float:
    """Numeric value of one derivative entry at the given arguments."""
    if isinstance(entry, float):
        return entry
    if entry.startswith("#"):
        return sym_args[int(entry[1:]) - 1]
    return float(registry()[entry](*sym_args))


def deriv_term(entry, args: Sequence[Term]) -> Term:
    """Term for one derivative entry applied to the argument terms."""
    if isinstance(entry, float):
        return Num(entry)
    if entry.startswith("#"):
        return args[int(entry[1:]) - 1]
    return FunApp(entry, args)


def _require_ground(g: Term) -> None:
    if not is_ground(g):
        raise GraphADError("not a ground term")


def _inputs(g: Term, inputs) -> list[str]:
    names = list(inputs) if inputs is not None else input_order(g)
    missing = fv(g) - set(names)
    if missing:
        raise GraphADError(f"free variables not among the inputs: {sorted(missing)}")
    return names


# ---------------------------------------------------------------- numeric forward mode


def fwd_numeric(g: Term, point: Sequence[float], j: int, inputs=None) -> tuple[float, float]:
    """Value and j-th partial derivative (1-based) by dual numbers."""
    _require_ground(g)
    names = _inputs(g, inputs)
    if len(point) != len(names):
        raise GraphADError(f"point has {len(point)} coordinates, graph has {len(names)} inputs")
    if not 1 <= j <= len(names):
        raise GraphADError(f"input index {j} out of range")
    env = {x: DualNumber(float(r), 1.0 if i == j - 1 else 0.0) for i, (x, r) in enumerate(zip(names, point))}
    d = _dual(g, env)
    return d.primal, d.tangent


@deep
def _dual(t: Term, env: dict) -> DualNumber:
    return _dual_rec(t, env)


def _dual_rec(t: Term, env: dict) -> DualNumber:
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, Num):
        return DualNumber(t.value, 0.0)
    if isinstance(t, ESub):
        return _dual_rec(t.body, {**env, t.var: _dual_rec(t.bound, env)})
    if isinstance(t, Sum):
        a, b = _dual_rec(t.left, env), _dual_rec(t.right, env)
        return DualNumber(a.primal + b.primal, a.tangent + b.tangent)
    if isinstance(t, Mult):
        a, b = _dual_rec(t.left, env), _dual_rec(t.right, env)
        return DualNumber(a.primal * b.primal, a.tangent * b.primal + a.primal * b.tangent)
    if isinstance(t, FunApp):
        ds = [_dual_rec(a, env) for a in t.args]
        xs = [d.primal for d in ds]
        value = float(registry()[t.sym](*xs))
        tangent = 0.0
        for entry, d in zip(derivatives(t.sym), ds):
            if d.tangent != 0.0:
                tangent += deriv_value(entry, xs) * d.tangent
        return DualNumber(value, tangent)
    raise GraphADError(f"not a ground term: {t}")


# ---------------------------------------------------------------- symbolic forward mode

FWD_R = Prod(REAL, REAL)


def fwd_transform(g: Term) -> Term:
    """The forward-mode program of ``g``: every R becomes a (primal, tangent) pair."""
    _require_ground(g)
    return _fwd(g)


@deep
def _fwd(t: Term) -> Term:
    return _fwd_rec(t)


def _fwd_rec(t: Term) -> Term:
    if isinstance(t, Var):
        return t
    if isinstance(t, Num):
        return Pair(t, Num(0.0))
    if isinstance(t, ESub):
        return ESub(t.var, Ann.EXP, FWD_R, _fwd_rec(t.bound), _fwd_rec(t.body))
    if isinstance(t, (Sum, Mult, FunApp)):
        args = list(t.children())
        lets = []
        for i, a in enumerate(args):
            if not isinstance(a, Var):
                x = fresh("x")
                lets.append((x, _fwd_rec(a)))
                args[i] = Var(x)
        out = _fwd_op(t, args)
        for x, bound in reversed(lets):
            out = ESub(x, Ann.EXP, FWD_R, bound, out)
        return out
    raise GraphADError(f"not a ground term: {t}")


def _fwd_op(t: Term, args: list) -> Term:
    """``let (z_i, a_i) = x_i in (op(z), sum_i d_i op(z) * a_i)`` for variable args."""
    zs = [Var(fresh("z")) for _ in args]
    ts = [Var(fresh("a")) for _ in args]
    if isinstance(t, Sum):
        primal: Term = Sum(zs[0], zs[1])
        tangent: Term = Sum(ts[0], ts[1])
    else:
        if isinstance(t, Mult):
            primal, entries = Mult(zs[0], zs[1]), MULT_DERIV
        else:
            primal, entries = FunApp(t.sym, zs), derivatives(t.sym)
        tangent = None
        for entry, a in zip(entries, ts):
            term = Mult(deriv_term(entry, zs), a)
            tangent = term if tangent is None else Sum(tangent, term)
    out: Term = Pair(primal, tangent)
    for x, z, a in reversed(list(zip(args, zs, ts))):
        out = LetPair(z.name, REAL, a.name, REAL, x, out)
    return out


def seed_forward(fg: Term, names: Sequence[str], point: Sequence[float], j: int) -> Term:
    """Bind input i to (r_i, 1 if i = j else 0), j 1-based."""
    out = fg
    for i in range(len(names) - 1, -1, -1):
        seed = Pair(Num(point[i]), Num(1.0 if i == j - 1 else 0.0))
        out = ESub(names[i], Ann.EXP, FWD_R, seed, out)
    return out


def fwd_symbolic(g: Term, point: Sequence[float], j: int, inputs=None):
    """Value, j-th partial and step count by normalizing the forward program."""
    names = _inputs(g, inputs)
    term = seed_forward(fwd_transform(g), names, point, j)
    nf, trace = normalize(term, strategy="bottom_up")
    if not (isinstance(nf, Pair) and isinstance(nf.fst, Num) and isinstance(nf.snd, Num)):
        raise GraphADError(f"forward program did not reduce to a numeral pair: {nf}")
    return nf.fst.value, nf.snd.value, trace.total


# ---------------------------------------------------------------- numeric backpropagation


@dataclass
class _Edge:
    target: int
    op: object  # "sum", "mult" or a symbol name
    sources: list
    marked: bool = False


def _hypergraph(g: Term, names: Sequence[str]):
    """Nodes (input nodes first) and hyperedges of ``g``; returns also the output node."""
    cells: list = []
    consts: dict = {}
    edges: list = []
    env = {}
    for x in names:
        env[x] = len(cells)
        cells.append(None)

    def node() -> int:
        cells.append(None)
        return len(cells) - 1

    def build(t: Term, env: dict) -> int:
        while isinstance(t, ESub):
            env = {**env, t.var: build(t.bound, env)}
            t = t.body
        if isinstance(t, Var):
            return env[t.name]
        if isinstance(t, Num):
            n = node()
            consts[n] = t.value
            return n
        srcs = [build(a, env) for a in t.children()]
        op = "sum" if isinstance(t, Sum) else "mult" if isinstance(t, Mult) else t.sym
        n = node()
        edges.append(_Edge(n, op, srcs))
        return n

    out = deep(build)(g, env)
    return cells, consts, edges, out


def bp_numeric(g: Term, point: Sequence[float], inputs=None) -> tuple[float, list[float]]:
    """Value and gradient by the marking backpropagation algorithm."""
    _require_ground(g)
    names = _inputs(g, inputs)
    if len(point) != len(names):
        raise GraphADError(f"point has {len(point)} coordinates, graph has {len(names)} inputs")
    cells, consts, edges, out = _hypergraph(g, names)
    # initialization and forward phase: edges are listed in creation order,
    # which is a topological order
    mem = [AdjointCell(0.0) for _ in cells]
    for i, r in enumerate(point):
        mem[i].primal = float(r)
    for n, v in consts.items():
        mem[n].primal = v
    for e in edges:
        xs = [mem[s].primal for s in e.sources]
        mem[e.target].primal = _op_value(e.op, xs)
    mem[out].adjoint = 1.0
    # backward phase: an edge is ready when every edge reading its target is marked
    readers = [0] * len(cells)
    for e in edges:
        for s in e.sources:
            readers[s] += 1
    producer = {e.target: e for e in edges}
    ready = [e for e in edges if readers[e.target] == 0]
    while ready:
        e = ready.pop()
        if e.marked:
            raise AssertionError("hyperedge visited twice")
        w = mem[e.target]
        xs = [mem[s].primal for s in e.sources]
        for s, d in zip(e.sources, _op_derivs(e.op, xs)):
            mem[s].adjoint += d * w.adjoint
        e.marked = True
        for s in e.sources:
            readers[s] -= 1
            if readers[s] == 0 and s in producer:
                ready.append(producer[s])
    if not all(e.marked for e in edges):
        raise AssertionError("backward phase left unmarked hyperedges")
    return mem[out].primal, [mem[i].adjoint for i in range(len(names))]


def _op_value(op, xs) -> float:
    if op == "sum":
        return xs[0] + xs[1]
    if op == "mult":
        return xs[0] * xs[1]
    return float(registry()[op](*xs))


def _op_derivs(op, xs) -> list[float]:
    if op == "sum":
        return [1.0, 1.0]
    entries = MULT_DERIV if op == "mult" else derivatives(op)
    return [deriv_value(e, xs) for e in entries]


# ---------------------------------------------------------------- symbolic backpropagation


@dataclass
class BpResult:
    """``(primal, (parts) alpha) beta`` with contexts listed outermost first."""

    primal: Term
    parts: list
    alpha: list
    beta: list
    seed: str

    def assemble(self) -> Term:
        return wrap(Pair(self.primal, wrap(numeral_tuple_terms(self.parts), self.alpha)), self.beta)


def numeral_tuple_terms(items: Sequence[Term]) -> Term:
    out = items[-1]
    for t in reversed(items[:-1]):
        out = Pair(t, out)
    return out


def oplus(a: Term | None, b: Term | None) -> Term | None:
    """Sum that drops numeral-zero operands (``None`` also stands for zero)."""
    if a is None or (isinstance(a, Num) and a.value == 0.0):
        return b
    if b is None or (isinstance(b, Num) and b.value == 0.0):
        return a
    return Sum(a, b)


def desugar_ground(g: Term, avoid=()) -> Term:
    """Name compound arguments and make every binder unique and unlike ``avoid``."""
    taken = set(avoid)
    return deep(_desugar)(g, {}, taken)


def _desugar(t: Term, ren: dict, taken: set) -> Term:
    if isinstance(t, Var):
        return ren.get(t.name, t)
    if isinstance(t, Num):
        return t
    if isinstance(t, ESub):
        bound = _desugar(t.bound, ren, taken)
        name = t.var
        if name in taken:
            name = fresh(name)
        taken.add(name)
        body = _desugar(t.body, {**ren, t.var: Var(name)}, taken)
        return ESub(name, Ann.EXP, REAL, bound, body)
    if isinstance(t, Sum):
        return Sum(_desugar(t.left, ren, taken), _desugar(t.right, ren, taken))
    if isinstance(t, (Mult, FunApp)):
        args = [_desugar(a, ren, taken) for a in t.children()]
        lets = []
        for i, a in enumerate(args):
            if not isinstance(a, Var):
                x = fresh("y")
                taken.add(x)
                lets.append((x, a))
                args[i] = Var(x)
        out = Mult(*args) if isinstance(t, Mult) else FunApp(t.sym, args)
        for x, bound in lets:
            out = ESub(x, Ann.EXP, REAL, bound, out)
        return out
    raise GraphADError(f"not a ground term: {t}")


def bp_transform(g: Term, inputs: Sequence[str] | None = None, seed: str = "a") -> BpResult:
    """Symbolic backpropagation of a ground term over ``inputs`` with seed ``seed``."""
    _require_ground(g)
    names = _inputs(g, inputs)
    if not names:
        raise GraphADError("backpropagation needs at least one input")
    if seed in names:
        raise GraphADError(f"seed {seed!r} clashes with an input")
    g = desugar_ground(g, list(names) + [seed])
    primal, parts, alpha, beta = deep(_bp)(g, list(names), seed)
    n = len(names)
    full = [parts.get(i, Num(0.0)) for i in range(n)]
    return BpResult(primal, full, alpha, beta, seed)


def _bp(t: Term, names: list, a: str):
    """Returns (G0, sparse parts {position: term}, alpha, beta); frames outermost first."""
    if isinstance(t, Var):
        return t, {names.index(t.name): Var(a)}, [], []
    if isinstance(t, Num):
        return t, {}, [], []
    if isinstance(t, (Mult, FunApp)):
        args = list(t.children())
        entries = MULT_DERIV if isinstance(t, Mult) else derivatives(t.sym)
        parts: dict = {}
        for entry, y in zip(entries, args):
            pos = names.index(y.name)
            parts[pos] = oplus(parts.get(pos), Mult(deriv_term(entry, args), Var(a)))
        return t, parts, [], []
    if isinstance(t, Sum):
        f0, p1, al1, be1 = _bp(t.left, names, a)
        g0, p2, al2, be2 = _bp(t.right, names, a)
        parts = {}
        for pos in sorted(set(p1) | set(p2)):
            v = oplus(p1.get(pos), p2.get(pos))
            if v is not None:
                parts[pos] = v
        return Sum(f0, g0), parts, al2 + al1, be2 + be1
    if isinstance(t, ESub):
        z = t.var
        n = len(names)
        f0, p1, al1, be1 = _bp(t.body, names + [z], a)
        b = fresh("b")
        g0, p2, al2, be2 = _bp(t.bound, names, b)
        h = p1.pop(n, None)
        zframe = Frame((z,), (REAL,), g0)
        if h is None or (isinstance(h, Num) and h.value == 0.0):
            return f0, p1, al1, be2 + [zframe] + be1
        parts = {}
        for pos in sorted(set(p1) | set(p2)):
            v = oplus(p1.get(pos), p2.get(pos))
            if v is not None:
                parts[pos] = v
        bframe = Frame((b,), (REAL,), h)
        return f0, parts, al1 + [bframe] + al2, be2 + [zframe] + be1
    raise GraphADError(f"not a ground term: {t}")


def seed_backward(bp: BpResult, names: Sequence[str], point: Sequence[float], seed_value: float = 1.0) -> Term:
    out = ESub(bp.seed, Ann.EXP, REAL, Num(seed_value), bp.assemble())
    for i in range(len(names) - 1, -1, -1):
        out = ESub(names[i], Ann.EXP, REAL, Num(point[i]), out)
    return out


BP_RULES = frozenset({"R20n", "R21", "R23", "R25", "R34"})


def bp_symbolic(g: Term, point: Sequence[float], inputs=None):
    """Value, gradient and step count by normalizing the backpropagation term."""
    names = _inputs(g, inputs)
    bp = bp_transform(g, names)
    term = seed_backward(bp, names, point)
    nf, trace = normalize(term, rules=BP_RULES, strategy="bottom_up")
    if not (isinstance(nf, Pair) and isinstance(nf.fst, Num)):
        raise GraphADError(f"backpropagation term did not reduce to numerals: {nf}")
    grad = [c.value for c in tuple_items(nf.snd, len(names))]
    return nf.fst.value, grad, trace.total
