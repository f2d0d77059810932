"""Type inference for both judgment forms: plain and linear in one variable.

``infer(ctx, t)`` computes A with ``ctx |- t : A``.  When the context has a
linear slot ``z`` the judgment is ``ctx |-_z t : R^d``: ``z`` must occur
linearly in ``t``, where linearity means what the syntax-directed rules
below say (a single tracked variable, as in the calculus).
"""

from __future__ import annotations

from dataclasses import dataclass, field

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
    euclid,
    euclid_dim,
    fv,
    input_order,
    type_str,
)


class LbpTypeError(TypeError):
    """The term has no type in the given context."""


@dataclass
class TypingContext:
    """Exponential bindings plus an optional linear slot."""

    env: dict[str, Type] = field(default_factory=dict)
    linear: str | None = None

    def __post_init__(self):
        if self.linear is not None and self.linear in self.env:
            raise ValueError(f"{self.linear!r} is both exponential and linear")


@dataclass(frozen=True)
class Judgment:
    env: tuple
    term: Term
    type: Type
    linear_used: bool


def _ctx(ctx) -> TypingContext:
    if ctx is None:
        return TypingContext()
    if isinstance(ctx, TypingContext):
        return ctx
    return TypingContext(dict(ctx))


def infer(ctx, t: Term) -> Type:
    """The type of ``t`` under ``ctx``, or LbpTypeError."""
    c = _ctx(ctx)
    return _infer_entry(t, dict(c.env), c.linear)


def judge(ctx, t: Term) -> Judgment:
    c = _ctx(ctx)
    ty = infer(c, t)
    return Judgment(tuple(c.env.items()), t, ty, c.linear is not None)


def open_context(t: Term) -> TypingContext:
    """All free variables at type R, in input order."""
    return TypingContext({x: REAL for x in input_order(t)})


def infer_open(t: Term) -> Type:
    return infer(open_context(t), t)


@deep
def _infer_entry(t, env, z):
    return _Checker(registry()).check(t, env, z)


def _err(msg: str):
    raise LbpTypeError(msg)


class _Checker:
    def __init__(self, reg):
        self.reg = reg

    def check(self, t: Term, env: dict, z: str | None) -> Type:
        if isinstance(t, Var):
            if z is not None and t.name == z:
                return REAL
            ty = env.get(t.name)
            if ty is None:
                if t.ann is Ann.LIN:
                    _err(f"linear variable {t.name!r} used outside its linear scope")
                _err(f"unbound variable {t.name!r}")
            if z is not None:
                _err(f"linear variable {z!r} is discarded (found {t.name!r})")
            return ty
        if isinstance(t, Num):
            if z is not None and t.value != 0.0:
                _err(f"linear variable {z!r} is discarded by numeral {t.value}")
            return REAL
        if isinstance(t, Pair):
            return Prod(self.check(t.fst, env, z), self.check(t.snd, env, z))
        if isinstance(t, Sum):
            a = self.check(t.left, env, z)
            b = self.check(t.right, env, z)
            if a != b:
                _err(f"sum of {type_str(a)} and {type_str(b)}")
            if euclid_dim(a) is None:
                _err(f"sum at non-Euclidean type {type_str(a)}")
            return a
        if isinstance(t, Mult):
            return self.mult(t, env, z)
        if isinstance(t, FunApp):
            sym = self.reg.get(t.sym)
            if sym is None:
                _err(f"unknown function symbol {t.sym!r}")
            if len(t.args) != sym.arity:
                _err(f"{t.sym} expects {sym.arity} arguments, got {len(t.args)}")
            if z is not None:
                _err(f"linear variable {z!r} cannot occur under {t.sym}")
            for a in t.args:
                ty = self.check(a, env, None)
                if ty != REAL:
                    _err(f"argument of {t.sym} has type {type_str(ty)}, expected R")
            return REAL
        if isinstance(t, Lam):
            if t.ann is Ann.LIN:
                if z is not None:
                    _err(f"linear abstraction inside the scope of linear {z!r}")
                if t.ty != REAL:
                    _err("linear binder must have type R")
                body = self.check(t.body, self._without(env, t.var), t.var)
                d = euclid_dim(body)
                if d is None:
                    _err(f"linear abstraction body has type {type_str(body)}, expected R^d")
                return Neg(d)
            if z is not None:
                _err(f"linear variable {z!r} cannot occur under an abstraction")
            body = self.check(t.body, {**env, t.var: t.ty}, None)
            return Arrow(t.ty, body)
        if isinstance(t, App):
            f = self.check(t.fun, env, None)
            if isinstance(f, Neg):
                a = self.check(t.arg, env, z)
                if a != REAL:
                    _err(f"linear map applied to {type_str(a)}, expected R")
                return euclid(f.dim)
            if z is not None:
                _err(f"linear variable {z!r} in argument of a non-linear application")
            if not isinstance(f, Arrow):
                _err(f"application of non-function of type {type_str(f)}")
            a = self.check(t.arg, env, None)
            if a != f.dom:
                _err(f"argument has type {type_str(a)}, expected {type_str(f.dom)}")
            return f.cod
        if isinstance(t, LetPair):
            b = self.check(t.bound, env, None)
            if not isinstance(b, Prod):
                _err(f"pair destructuring of {type_str(b)}")
            if b.left != t.xty or b.right != t.yty:
                _err(
                    f"pair binder types {type_str(t.xty)}, {type_str(t.yty)} "
                    f"do not match {type_str(b)}"
                )
            self._no_shadow(z, t.x, t.y)
            return self.check(t.body, {**env, t.x: t.xty, t.y: t.yty}, z)
        if isinstance(t, ESub):
            if t.ann is Ann.LIN:
                u = self.check(t.bound, env, z)
                if u != REAL:
                    _err(f"linear substitution of {type_str(u)}, expected R")
                body = self.check(t.body, self._without(env, t.var), t.var)
                if euclid_dim(body) is None:
                    _err(f"linear substitution body has type {type_str(body)}")
                return body
            u = self.check(t.bound, env, None)
            if u != t.ty:
                _err(f"binder {t.var!r} declared {type_str(t.ty)} but bound to {type_str(u)}")
            self._no_shadow(z, t.var)
            return self.check(t.body, {**env, t.var: t.ty}, z)
        _err(f"not a term: {t!r}")

    def mult(self, t: Mult, env: dict, z: str | None) -> Type:
        if z is None:
            left_z = right_z = None
        elif z in fv(t.left) and z in fv(t.right):
            _err(f"linear variable {z!r} occurs in both factors of a product")
        elif z in fv(t.left):
            left_z, right_z = z, None
        elif z in fv(t.right):
            left_z, right_z = None, z
        elif _is_zero_tuple(t.left):
            left_z, right_z = z, None
        else:
            left_z, right_z = None, z
        a = self.check(t.left, env, left_z)
        b = self.check(t.right, env, right_z)
        if a != REAL or b != REAL:
            _err(f"product of {type_str(a)} and {type_str(b)}")
        return REAL

    @staticmethod
    def _without(env: dict, name: str) -> dict:
        if name in env:
            env = dict(env)
            del env[name]
        return env

    @staticmethod
    def _no_shadow(z, *names):
        if z is not None and z in names:
            _err(f"linear variable {z!r} is shadowed")


def _is_zero_tuple(t: Term) -> bool:
    while isinstance(t, Pair):
        if not _is_zero_tuple(t.fst):
            return False
        t = t.snd
    return isinstance(t, Num) and t.value == 0.0


def is_ground(t: Term) -> bool:
    """Whether ``t`` lies in the first-order fragment of computational graphs.

    The fragment is: variables, numerals, exponential let-bindings at type R,
    function symbols and products (compound arguments count as let sugar),
    and sums.
    """
    return _ground(t)


@deep
def _ground(t: Term) -> bool:
    return _ground_rec(t)


def _ground_rec(t: Term) -> bool:
    while isinstance(t, ESub):
        if t.ann is not Ann.EXP or t.ty != REAL or not _ground_rec(t.bound):
            return False
        t = t.body
    if isinstance(t, (Var, Num)):
        return isinstance(t, Num) or t.ann is Ann.EXP
    if isinstance(t, (Sum, Mult)):
        return _ground_rec(t.left) and _ground_rec(t.right)
    if isinstance(t, FunApp):
        return all(_ground_rec(a) for a in t.args)
    return False
