"""Types, terms, concrete syntax and meta-level term utilities.

Terms are immutable.  Free-variable sets and sizes are computed lazily and
cached on the node, so sharing subterms between terms is cheap and safe.

Concrete syntax::

    type ::= R | type * type | type -> type | Neg(d) | (type)
    term ::= x | r | \\x[:type]. term | lin x. term | term term
           | (term, term, ...) | let x[:type] = term in term
           | let lin x = term in term
           | let (x[:type], y[:type]) = term in term
           | term + term | term * term | f(term, ...)

``*`` between types is the product (right associative), between terms it is
multiplication.  ``let lin`` is the linear explicit substitution produced
when a linear abstraction is applied.  Omitted binder types default to R.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping

from ._deep import deep
from .functions import registry

# ---------------------------------------------------------------- types


class Type:
    __slots__ = ()

    def __str__(self) -> str:
        return type_str(self)


@dataclass(frozen=True, repr=False)
class Real(Type):
    def __repr__(self) -> str:
        return "R"


@dataclass(frozen=True, repr=False)
class Prod(Type):
    left: Type
    right: Type

    def __repr__(self) -> str:
        return type_str(self)


@dataclass(frozen=True, repr=False)
class Arrow(Type):
    dom: Type
    cod: Type

    def __repr__(self) -> str:
        return type_str(self)


@dataclass(frozen=True, repr=False)
class Neg(Type):
    dim: int

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"Neg dimension must be a positive integer, got {self.dim!r}")

    def __repr__(self) -> str:
        return type_str(self)


REAL = Real()


def euclid(d: int) -> Type:
    """R^d as a right-nested product; R^1 is R."""
    if d < 1:
        raise ValueError("dimension must be positive")
    t: Type = REAL
    for _ in range(d - 1):
        t = Prod(REAL, t)
    return t


def euclid_dim(t: Type) -> int | None:
    """d when ``t`` is R^d, otherwise None."""
    d = 1
    while isinstance(t, Prod):
        if t.left != REAL:
            return None
        t, d = t.right, d + 1
    return d if t == REAL else None


def has_neg(t: Type) -> bool:
    if isinstance(t, Neg):
        return True
    if isinstance(t, Prod):
        return has_neg(t.left) or has_neg(t.right)
    if isinstance(t, Arrow):
        return has_neg(t.dom) or has_neg(t.cod)
    return False


def type_str(t: Type, level: int = 0) -> str:
    # level 0: anywhere, 1: left of ->, 2: operand of *
    if isinstance(t, Real):
        return "R"
    if isinstance(t, Neg):
        return f"Neg({t.dim})"
    if isinstance(t, Prod):
        s = f"{type_str(t.left, 2)} * {type_str(t.right, 1)}"
        return f"({s})" if level >= 2 else s
    if isinstance(t, Arrow):
        s = f"{type_str(t.dom, 1)} -> {type_str(t.cod, 0)}"
        return f"({s})" if level >= 1 else s
    raise TypeError(f"not a type: {t!r}")


# ---------------------------------------------------------------- terms


class Ann(str, Enum):
    EXP = "exp"
    LIN = "lin"


EMPTY: frozenset = frozenset()


class Term:
    """Base class; subclasses list their child fields in ``_kids``."""

    __slots__ = ("_fv", "_size", "_nf")
    _kids: tuple[str, ...] = ()

    def _init(self):
        self._fv = None
        self._size = 0
        self._nf = None

    def children(self) -> tuple["Term", ...]:
        return tuple(getattr(self, k) for k in self._kids)

    def __repr__(self) -> str:
        return pretty(self)

    def __str__(self) -> str:
        return pretty(self)


class Var(Term):
    __slots__ = ("name", "ann")

    def __init__(self, name: str, ann: Ann = Ann.EXP):
        self._init()
        self.name = name
        self.ann = ann


class Num(Term):
    __slots__ = ("value",)

    def __init__(self, value: float):
        self._init()
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"numeral must be finite, got {value}")
        self.value = value


class Lam(Term):
    __slots__ = ("var", "ann", "ty", "body")
    _kids = ("body",)

    def __init__(self, var: str, ann: Ann, ty: Type, body: Term):
        self._init()
        self.var, self.ann, self.ty, self.body = var, ann, ty, body


class App(Term):
    __slots__ = ("fun", "arg")
    _kids = ("fun", "arg")

    def __init__(self, fun: Term, arg: Term):
        self._init()
        self.fun, self.arg = fun, arg


class Pair(Term):
    __slots__ = ("fst", "snd")
    _kids = ("fst", "snd")

    def __init__(self, fst: Term, snd: Term):
        self._init()
        self.fst, self.snd = fst, snd


class LetPair(Term):
    """``let (x, y) = bound in body``."""

    __slots__ = ("x", "xty", "y", "yty", "bound", "body")
    _kids = ("bound", "body")

    def __init__(self, x: str, xty: Type, y: str, yty: Type, bound: Term, body: Term):
        self._init()
        if x == y:
            raise ValueError(f"pair binder repeats {x!r}")
        self.x, self.xty, self.y, self.yty = x, xty, y, yty
        self.bound, self.body = bound, body


class ESub(Term):
    """Explicit substitution ``body[var <- bound]``, i.e. ``let var = bound in body``."""

    __slots__ = ("var", "ann", "ty", "bound", "body")
    _kids = ("bound", "body")

    def __init__(self, var: str, ann: Ann, ty: Type, bound: Term, body: Term):
        self._init()
        self.var, self.ann, self.ty = var, ann, ty
        self.bound, self.body = bound, body


class Sum(Term):
    __slots__ = ("left", "right")
    _kids = ("left", "right")

    def __init__(self, left: Term, right: Term):
        self._init()
        self.left, self.right = left, right


class Mult(Term):
    __slots__ = ("left", "right")
    _kids = ("left", "right")

    def __init__(self, left: Term, right: Term):
        self._init()
        self.left, self.right = left, right


class FunApp(Term):
    __slots__ = ("sym", "args")

    def __init__(self, sym: str, args: Iterable[Term]):
        self._init()
        self.sym = sym
        self.args = tuple(args)

    def children(self) -> tuple[Term, ...]:
        return self.args


BINDERS = (Lam, LetPair, ESub)


def rebuild(t: Term, kids: tuple[Term, ...] | list[Term]) -> Term:
    """A copy of ``t`` with its children replaced (binder data kept)."""
    if isinstance(t, FunApp):
        return FunApp(t.sym, kids)
    if isinstance(t, Lam):
        return Lam(t.var, t.ann, t.ty, kids[0])
    if isinstance(t, ESub):
        return ESub(t.var, t.ann, t.ty, kids[0], kids[1])
    if isinstance(t, LetPair):
        return LetPair(t.x, t.xty, t.y, t.yty, kids[0], kids[1])
    if isinstance(t, (App, Pair, Sum, Mult)):
        return type(t)(kids[0], kids[1])
    return t


def bound_names(t: Term, index: int) -> tuple[str, ...]:
    """Names bound by ``t`` in its ``index``-th child."""
    if isinstance(t, Lam):
        return (t.var,)
    if isinstance(t, ESub) and index == 1:
        return (t.var,)
    if isinstance(t, LetPair) and index == 1:
        return (t.x, t.y)
    return ()


def numeral_tuple(values: Iterable[float]) -> Term:
    vals = list(values)
    if not vals:
        raise ValueError("empty tuple")
    t: Term = Num(vals[-1])
    for v in reversed(vals[:-1]):
        t = Pair(Num(v), t)
    return t


def zero_vector(d: int) -> Term:
    return numeral_tuple([0.0] * d)


def tuple_items(t: Term, n: int) -> list[Term]:
    """Split a right-nested n-tuple into its components."""
    out = []
    for _ in range(n - 1):
        if not isinstance(t, Pair):
            raise ValueError("not a tuple of the expected length")
        out.append(t.fst)
        t = t.snd
    out.append(t)
    return out


def is_value(t: Term) -> bool:
    while isinstance(t, Pair):
        if not is_value(t.fst):
            return False
        t = t.snd
    return isinstance(t, (Var, Num, Lam))


def is_zero(t: Term) -> bool:
    return isinstance(t, Num) and t.value == 0.0


# ---------------------------------------------------------------- fresh names

_counter = itertools.count(1)


def base_name(name: str) -> str:
    if name.startswith("%"):
        return "g"
    return name.split("%", 1)[0] or "v"


def fresh(base: str = "v") -> str:
    """A name never produced before: ``base%N`` for a global counter N."""
    return f"{base_name(base)}%{next(_counter)}"


def grad_name(j: int) -> str:
    """Reserved name of the backpropagator of input ``j`` (1-based)."""
    return f"%grad:{j}"


_GRAD_RE = re.compile(r"%grad:(\d+)$")


def grad_index(name: str) -> int | None:
    m = _GRAD_RE.match(name)
    return int(m.group(1)) if m else None


# ---------------------------------------------------------------- fv, size


def _union(a: frozenset, b: frozenset) -> frozenset:
    if not a:
        return b
    if not b or b <= a:
        return a
    if a <= b:
        return b
    return a | b


def fv(t: Term) -> frozenset:
    """Names of the free variables of ``t`` (cached)."""
    r = t._fv
    if r is not None:
        return r
    return _fv(t)


@deep
def _fv(t: Term) -> frozenset:
    return _fv_rec(t)


def _fv_rec(t: Term) -> frozenset:
    r = t._fv
    if r is not None:
        return r
    if isinstance(t, Var):
        r = frozenset((t.name,))
    elif isinstance(t, Num):
        r = EMPTY
    elif isinstance(t, Lam):
        r = _fv_rec(t.body)
        if t.var in r:
            r = r - {t.var}
    elif isinstance(t, ESub):
        b = _fv_rec(t.body)
        if t.var in b:
            b = b - {t.var}
        r = _union(_fv_rec(t.bound), b)
    elif isinstance(t, LetPair):
        b = _fv_rec(t.body)
        if t.x in b or t.y in b:
            b = b - {t.x, t.y}
        r = _union(_fv_rec(t.bound), b)
    else:
        r = EMPTY
        for k in t.children():
            r = _union(r, _fv_rec(k))
    t._fv = r
    return r


def free_vars(t: Term) -> set[tuple[str, Ann]]:
    """Free variables paired with the annotation carried by their occurrences."""
    out: set[tuple[str, Ann]] = set()
    names = fv(t)

    def walk(u: Term, bound: frozenset):
        if not (fv(u) - bound):
            return
        if isinstance(u, Var):
            out.add((u.name, u.ann))
            return
        for i, k in enumerate(u.children()):
            walk(k, bound | set(bound_names(u, i)))

    if names:
        deep(walk)(t, EMPTY)
    return out


def size(t: Term) -> int:
    """Number of symbols (nodes) of ``t`` (cached)."""
    r = t._size
    if r:
        return r
    return _size(t)


@deep
def _size(t: Term) -> int:
    return _size_rec(t)


def _size_rec(t: Term) -> int:
    r = t._size
    if r:
        return r
    r = 1
    for k in t.children():
        r += _size_rec(k)
    t._size = r
    return r


def occurrences(t: Term, x: str) -> int:
    """Number of free occurrences of ``x`` in ``t``."""
    if x not in fv(t):
        return 0
    if isinstance(t, Var):
        return 1
    n = 0
    for i, k in enumerate(t.children()):
        if x not in bound_names(t, i):
            n += occurrences(k, x)
    return n


def input_order(t: Term) -> list[str]:
    """Free variables in order of first occurrence (preorder, let-bound first)."""
    seen: list[str] = []
    names = fv(t)
    found: set[str] = set()

    def walk(u: Term, bound: frozenset):
        rest = fv(u) - bound - found
        if not rest:
            return
        if isinstance(u, Var):
            found.add(u.name)
            seen.append(u.name)
            return
        for i, k in enumerate(u.children()):
            walk(k, bound | set(bound_names(u, i)))

    if names:
        deep(walk)(t, EMPTY)
    return seen


# ---------------------------------------------------------------- paths

Path = tuple


def subterm(t: Term, path: Iterable[int]) -> Term:
    for i in path:
        kids = t.children()
        if not 0 <= i < len(kids):
            raise IndexError(f"invalid path step {i}")
        t = kids[i]
    return t


def replace_at(t: Term, path: Iterable[int], new: Term) -> Term:
    path = tuple(path)
    if not path:
        return new
    spine = [t]
    for i in path[:-1]:
        spine.append(spine[-1].children()[i])
    for node, i in zip(reversed(spine), reversed(path)):
        kids = list(node.children())
        if not 0 <= i < len(kids):
            raise IndexError(f"invalid path step {i}")
        kids[i] = new
        new = rebuild(node, kids)
    return new


def subterms(t: Term, path: Path = ()) -> Iterator[tuple[Path, Term]]:
    """All (path, subterm) pairs in preorder."""
    stack = [(path, t)]
    while stack:
        p, u = stack.pop()
        yield p, u
        kids = u.children()
        for i in range(len(kids) - 1, -1, -1):
            stack.append((p + (i,), kids[i]))


# ---------------------------------------------------------------- substitution


def subst_many(t: Term, sigma: Mapping[str, Term]) -> Term:
    """Capture-avoiding simultaneous substitution of free variables."""
    if not sigma:
        return t
    fvs: frozenset = EMPTY
    for v in sigma.values():
        fvs = _union(fvs, fv(v))
    return _subst_entry(t, dict(sigma), fvs)


@deep
def _subst_entry(t, sigma, fvs):
    return _subst(t, sigma, fvs)


def _subst(t: Term, sigma: dict, fvs: frozenset) -> Term:
    tf = fv(t)
    if len(sigma) == 1:
        if next(iter(sigma)) not in tf:
            return t
    elif tf.isdisjoint(sigma):
        return t
    if isinstance(t, Var):
        return sigma.get(t.name, t)
    if isinstance(t, Lam):
        var, body = _enter(t.var, t.ann, t.body, sigma, fvs)
        return Lam(var, t.ann, t.ty, body)
    if isinstance(t, ESub):
        bound = _subst(t.bound, sigma, fvs)
        var, body = _enter(t.var, t.ann, t.body, sigma, fvs)
        return ESub(var, t.ann, t.ty, bound, body)
    if isinstance(t, LetPair):
        bound = _subst(t.bound, sigma, fvs)
        inner = {k: v for k, v in sigma.items() if k != t.x and k != t.y}
        x, y, body = t.x, t.y, t.body
        if inner:
            extra = {}
            if x in fvs:
                x2 = fresh(x)
                extra[x] = Var(x2)
                x = x2
            if y in fvs:
                y2 = fresh(y)
                extra[y] = Var(y2)
                y = y2
            if extra:
                body = _subst(body, extra, frozenset(v.name for v in extra.values()))
            body = _subst(body, inner, fvs)
        return LetPair(x, t.xty, y, t.yty, bound, body)
    return rebuild(t, [_subst(k, sigma, fvs) for k in t.children()])


def _enter(var: str, ann: Ann, body: Term, sigma: dict, fvs: frozenset):
    inner = sigma
    if var in sigma:
        inner = {k: v for k, v in sigma.items() if k != var}
        if not inner:
            return var, body
    if var in fvs and not fv(body).isdisjoint(inner):
        new = fresh(var)
        body = _subst(body, {var: Var(new, ann)}, frozenset((new,)))
        var = new
    return var, _subst(body, inner, fvs)


def subst_meta(t: Term, x: str, v: Term) -> Term:
    """Capture-avoiding meta-level substitution t{v/x}."""
    return subst_many(t, {x: v})


def rename_free(t: Term, old: str, new: str, ann: Ann | None = None) -> Term:
    """Rename free occurrences of ``old`` to the (fresh) name ``new``."""
    if old not in fv(t):
        return t
    occ_ann = ann
    if occ_ann is None:
        occ_ann = next((a for n, a in free_vars(t) if n == old), Ann.EXP)
    return subst_many(t, {old: Var(new, occ_ann)})


# ---------------------------------------------------------------- alpha equivalence


def alpha_eq(t: Term, u: Term, types: bool = True) -> bool:
    """Equality up to consistent renaming of bound variables.

    With ``types=False`` binder type annotations are ignored.
    """
    return _alpha_entry(t, u, types)


@deep
def _alpha_entry(t, u, types):
    return _alpha(t, u, {}, {}, itertools.count(), types)


def _alpha(t: Term, u: Term, el: dict, er: dict, ids, types: bool) -> bool:
    if t is u and not el and not er:
        return True
    if type(t) is not type(u):
        return False
    if isinstance(t, Var):
        a, b = el.get(t.name), er.get(u.name)
        if a is None and b is None:
            return t.name == u.name and t.ann == u.ann
        return a == b
    if isinstance(t, Num):
        return t.value == u.value
    if isinstance(t, FunApp):
        return (
            t.sym == u.sym
            and len(t.args) == len(u.args)
            and all(_alpha(a, b, el, er, ids, types) for a, b in zip(t.args, u.args))
        )
    if isinstance(t, Lam):
        if t.ann != u.ann or (types and t.ty != u.ty):
            return False
        return _under(((t.var, u.var),), t.body, u.body, el, er, ids, types)
    if isinstance(t, ESub):
        if t.ann != u.ann or (types and t.ty != u.ty):
            return False
        if not _alpha(t.bound, u.bound, el, er, ids, types):
            return False
        return _under(((t.var, u.var),), t.body, u.body, el, er, ids, types)
    if isinstance(t, LetPair):
        if types and (t.xty != u.xty or t.yty != u.yty):
            return False
        if not _alpha(t.bound, u.bound, el, er, ids, types):
            return False
        return _under(((t.x, u.x), (t.y, u.y)), t.body, u.body, el, er, ids, types)
    return all(_alpha(a, b, el, er, ids, types) for a, b in zip(t.children(), u.children()))


def _under(pairs, tb, ub, el, er, ids, types) -> bool:
    saved = []
    for a, b in pairs:
        i = next(ids)
        saved.append((a, el.get(a), b, er.get(b)))
        el[a] = i
        er[b] = i
    try:
        return _alpha(tb, ub, el, er, ids, types)
    finally:
        for a, oa, b, ob in reversed(saved):
            if oa is None:
                el.pop(a, None)
            else:
                el[a] = oa
            if ob is None:
                er.pop(b, None)
            else:
                er[b] = ob


# ---------------------------------------------------------------- printer


def fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16 and not (v == 0.0 and math.copysign(1.0, v) < 0):
        return str(int(v))
    return repr(v)


def _binder_type(name: str, ty: Type) -> str:
    return name if ty == REAL else f"{name}:{type_str(ty)}"


@deep
def pretty(t: Term) -> str:
    """Concrete syntax of ``t``; parses back to an alpha-equal term."""
    out: list[str] = []
    _pp(t, 0, out)
    return "".join(out)


_LEVEL = {Sum: 1, Mult: 2, App: 3}


def _pp(t: Term, ctx: int, out: list) -> None:
    level = 0 if isinstance(t, BINDERS) else _LEVEL.get(type(t), 4)
    paren = level < ctx
    if paren:
        out.append("(")
    if isinstance(t, Var):
        out.append(t.name)
    elif isinstance(t, Num):
        out.append(fmt_num(t.value))
    elif isinstance(t, FunApp):
        out.append(t.sym)
        out.append("(")
        for i, a in enumerate(t.args):
            if i:
                out.append(", ")
            _pp(a, 0, out)
        out.append(")")
    elif isinstance(t, Pair):
        out.append("(")
        _pp(t.fst, 0, out)
        rest = t.snd
        while isinstance(rest, Pair):
            out.append(", ")
            _pp(rest.fst, 0, out)
            rest = rest.snd
        out.append(", ")
        _pp(rest, 0, out)
        out.append(")")
    elif isinstance(t, Lam):
        if t.ann is Ann.LIN:
            out.append(f"lin {t.var}. ")
        else:
            out.append(f"\\{t.var}:{type_str(t.ty)}. ")
        _pp(t.body, 0, out)
    elif isinstance(t, ESub):
        if t.ann is Ann.LIN:
            out.append(f"let lin {t.var} = ")
        else:
            out.append(f"let {_binder_type(t.var, t.ty)} = ")
        _pp(t.bound, 0, out)
        out.append(" in ")
        _pp(t.body, 0, out)
    elif isinstance(t, LetPair):
        out.append(f"let ({_binder_type(t.x, t.xty)}, {_binder_type(t.y, t.yty)}) = ")
        _pp(t.bound, 0, out)
        out.append(" in ")
        _pp(t.body, 0, out)
    elif isinstance(t, Sum):
        _pp(t.left, 1, out)
        out.append(" + ")
        _pp(t.right, 2, out)
    elif isinstance(t, Mult):
        _pp(t.left, 2, out)
        out.append(" * ")
        _pp(t.right, 3, out)
    elif isinstance(t, App):
        _pp(t.fun, 3, out)
        out.append(" ")
        _pp(t.arg, 4, out)
    else:
        raise TypeError(f"not a term: {t!r}")
    if paren:
        out.append(")")


# ---------------------------------------------------------------- parser


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"line {line}, column {col}: {msg}" if line else msg)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>%[A-Za-z_]+:\d+|[A-Za-z_][A-Za-z0-9_']*(?:%\d+)?)
  | (?P<op>->|[\\.:(),=+*])
    """,
    re.VERBOSE,
)
_KEYWORDS = {"let", "in", "lin"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            if kind == "ident" and s in _KEYWORDS:
                kind = s
            toks.append(_Tok(kind, s, line, pos - line_start + 1))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.scope: dict[str, Ann] = {}
        self.reg = registry()

    # token helpers
    def peek(self) -> _Tok:
        return self.toks[self.i]

    def at(self, *texts: str) -> bool:
        t = self.peek()
        return t.text in texts and t.kind not in ("ident", "num") or t.kind in texts

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text or t.kind in ("ident", "num"):
            self.fail(f"expected {text!r}, found {t.text or 'end of input'!r}")
        return self.take()

    def fail(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise ParseError(msg, tok.line, tok.col)

    def ident(self) -> str:
        t = self.peek()
        if t.kind != "ident":
            self.fail(f"expected identifier, found {t.text or 'end of input'!r}")
        if t.text in self.reg:
            self.fail(f"function symbol {t.text!r} cannot be used as a variable")
        return self.take().text

    # types
    def type_(self) -> Type:
        left = self.prod_type()
        if self.at("->"):
            self.take()
            return Arrow(left, self.type_())
        return left

    def prod_type(self) -> Type:
        left = self.atom_type()
        if self.at("*"):
            self.take()
            return Prod(left, self.prod_type())
        return left

    def atom_type(self) -> Type:
        t = self.peek()
        if t.kind == "ident" and t.text == "R":
            self.take()
            return REAL
        if t.kind == "ident" and t.text == "Neg":
            self.take()
            self.expect("(")
            n = self.take()
            if n.kind != "num" or not re.fullmatch(r"\d+", n.text) or int(n.text) < 1:
                self.fail("Neg dimension must be a positive integer", n)
            self.expect(")")
            return Neg(int(n.text))
        if self.at("("):
            self.take()
            ty = self.type_()
            self.expect(")")
            return ty
        self.fail(f"expected a type, found {t.text or 'end of input'!r}")

    def opt_type(self) -> Type:
        if self.at(":"):
            self.take()
            return self.type_()
        return REAL

    # terms
    def with_bound(self, names: list[tuple[str, Ann]], fn):
        saved = [(n, self.scope.get(n)) for n, _ in names]
        for n, a in names:
            self.scope[n] = a
        try:
            return fn()
        finally:
            for n, old in saved:
                if old is None:
                    self.scope.pop(n, None)
                else:
                    self.scope[n] = old

    def term(self) -> Term:
        if self.at("\\"):
            self.take()
            x = self.ident()
            ty = self.opt_type()
            self.expect(".")
            body = self.with_bound([(x, Ann.EXP)], self.term)
            return Lam(x, Ann.EXP, ty, body)
        if self.at("lin"):
            self.take()
            x = self.ident()
            self.expect(".")
            body = self.with_bound([(x, Ann.LIN)], self.term)
            return Lam(x, Ann.LIN, REAL, body)
        if self.at("let"):
            return self.let()
        return self.sum_()

    def let(self) -> Term:
        self.expect("let")
        if self.at("("):
            self.take()
            x = self.ident()
            xty = self.opt_type()
            self.expect(",")
            y = self.ident()
            yty = self.opt_type()
            self.expect(")")
            if x == y:
                self.fail(f"pair binder repeats {x!r}")
            self.expect("=")
            bound = self.term()
            self.expect("in")
            body = self.with_bound([(x, Ann.EXP), (y, Ann.EXP)], self.term)
            return LetPair(x, xty, y, yty, bound, body)
        ann = Ann.EXP
        if self.at("lin"):
            self.take()
            ann = Ann.LIN
        x = self.ident()
        ty = REAL if ann is Ann.LIN else self.opt_type()
        self.expect("=")
        bound = self.term()
        self.expect("in")
        body = self.with_bound([(x, ann)], self.term)
        return ESub(x, ann, ty, bound, body)

    def sum_(self) -> Term:
        left = self.mult()
        while self.at("+"):
            self.take()
            left = Sum(left, self.mult())
        return left

    def mult(self) -> Term:
        left = self.app()
        while self.at("*"):
            self.take()
            left = Mult(left, self.app())
        return left

    def starts_atom(self) -> bool:
        t = self.peek()
        return t.kind in ("ident", "num") or (t.kind == "op" and t.text == "(")

    def app(self) -> Term:
        f = self.atom()
        while self.starts_atom():
            f = App(f, self.atom())
        return f

    def atom(self) -> Term:
        t = self.peek()
        if t.kind == "num":
            self.take()
            try:
                return Num(float(t.text))
            except ValueError as exc:
                self.fail(str(exc), t)
        if t.kind == "ident":
            if t.text in self.reg:
                return self.funapp()
            name = self.ident()
            return Var(name, self.scope.get(name, Ann.EXP))
        if self.at("("):
            self.take()
            items = [self.term()]
            while self.at(","):
                self.take()
                items.append(self.term())
            self.expect(")")
            out = items[-1]
            for it in reversed(items[:-1]):
                out = Pair(it, out)
            return out
        self.fail(f"unexpected {t.text or 'end of input'!r}")

    def funapp(self) -> Term:
        tok = self.take()
        sym = self.reg[tok.text]
        if not self.at("("):
            self.fail(f"function symbol {tok.text!r} must be applied to arguments", tok)
        self.take()
        args = [self.term()]
        while self.at(","):
            self.take()
            args.append(self.term())
        self.expect(")")
        if len(args) != sym.arity:
            self.fail(f"{sym.name} expects {sym.arity} arguments, got {len(args)}", tok)
        return desugar_funapp(sym.name, args)

    def parse(self) -> Term:
        t = self.term()
        if self.peek().kind != "eof":
            self.fail(f"unexpected {self.peek().text!r} after term")
        return t


def desugar_funapp(sym: str, args: list[Term]) -> Term:
    """``f(t1..tk)`` as ``f(x1..xk)[x1<-t1]...[xk<-tk]`` for non-variable arguments."""
    names: list[Term] = []
    binds: list[tuple[str, Term]] = []
    for a in args:
        if isinstance(a, Var):
            names.append(a)
        else:
            x = fresh("a")
            names.append(Var(x))
            binds.append((x, a))
    t: Term = FunApp(sym, names)
    for x, a in binds:
        t = ESub(x, Ann.EXP, REAL, a, t)
    return t


@deep
def parse(text: str) -> Term:
    """Parse concrete syntax into a term."""
    return _Parser(text).parse()


@deep
def parse_type(text: str) -> Type:
    p = _Parser(text)
    ty = p.type_()
    if p.peek().kind != "eof":
        p.fail(f"unexpected {p.peek().text!r} after type")
    return ty
