"""Denotational evaluator: reals, tuples, functions and linear maps.

Explicit substitution is composition, linear abstractions denote linear maps
R -> R^d and are applied pointwise.  ``sem_gradient`` is the ground-truth
gradient used by the test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from ._deep import deep
from .functions import registry
from .syntax import (
    App,
    ESub,
    FunApp,
    Lam,
    LetPair,
    Mult,
    Num,
    Pair,
    Sum,
    Term,
    Var,
    Ann,
    input_order,
)


class EvalError(ValueError):
    """Evaluation failed: unbound name or a value of the wrong shape."""


class SemValue:
    __slots__ = ()


@dataclass(frozen=True)
class RealV(SemValue):
    value: float

    def __str__(self) -> str:
        return repr(self.value)


@dataclass(frozen=True)
class TupleV(SemValue):
    items: tuple

    def __str__(self) -> str:
        return "(" + ", ".join(str(i) for i in self.items) + ")"


@dataclass(frozen=True, eq=False)
class FuncV(SemValue):
    fn: Callable[[SemValue], SemValue]

    def __call__(self, x: SemValue) -> SemValue:
        return self.fn(x)

    def __str__(self) -> str:
        return "<function>"


@dataclass(frozen=True, eq=False)
class LinV(SemValue):
    """A linear map from R to R^d."""

    fn: Callable[[float], SemValue]

    def __call__(self, x) -> SemValue:
        if isinstance(x, RealV):
            x = x.value
        return self.fn(x)

    def __str__(self) -> str:
        return "<linear map>"


def _add(a: SemValue, b: SemValue) -> SemValue:
    if isinstance(a, RealV) and isinstance(b, RealV):
        return RealV(a.value + b.value)
    if isinstance(a, TupleV) and isinstance(b, TupleV):
        return TupleV((_add(a.items[0], b.items[0]), _add(a.items[1], b.items[1])))
    raise EvalError("sum of values of different shapes")


def _real(v: SemValue) -> float:
    if not isinstance(v, RealV):
        raise EvalError(f"expected a real, got {v}")
    return v.value


def _pair(v: SemValue) -> tuple:
    if not isinstance(v, TupleV):
        raise EvalError(f"expected a pair, got {v}")
    return v.items


def to_value(x) -> SemValue:
    """Lift floats and nested tuples of floats to SemValues."""
    if isinstance(x, SemValue):
        return x
    if isinstance(x, (tuple, list)):
        if len(x) == 1:
            return to_value(x[0])
        return TupleV((to_value(x[0]), to_value(tuple(x[1:]))))
    return RealV(float(x))


def flatten(v: SemValue) -> list[float]:
    """Components of a right-nested tuple of reals."""
    out = []
    while isinstance(v, TupleV):
        out.extend(flatten(v.items[0]))
        v = v.items[1]
    out.append(_real(v))
    return out


def eval(t: Term, env: Mapping[str, object] | None = None) -> SemValue:  # noqa: A001
    """The denotation of ``t`` at the environment ``env``."""
    e = {k: to_value(v) for k, v in (env or {}).items()}
    return _eval_entry(t, e)


@deep
def _eval_entry(t, env):
    return _Evaluator(registry()).ev(t, env)


class _Evaluator:
    def __init__(self, reg):
        self.reg = reg

    def ev(self, t: Term, env: dict) -> SemValue:
        if isinstance(t, Var):
            v = env.get(t.name)
            if v is None:
                raise EvalError(f"unbound variable {t.name!r}")
            return v
        if isinstance(t, Num):
            return RealV(t.value)
        if isinstance(t, Sum):
            return _add(self.ev(t.left, env), self.ev(t.right, env))
        if isinstance(t, Mult):
            return RealV(_real(self.ev(t.left, env)) * _real(self.ev(t.right, env)))
        if isinstance(t, FunApp):
            sym = self.reg.get(t.sym)
            if sym is None:
                raise EvalError(f"unknown function symbol {t.sym!r}")
            xs = [_real(self.ev(a, env)) for a in t.args]
            try:
                return RealV(float(sym(*xs)))
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise EvalError(f"{t.sym}{tuple(xs)}: {exc}") from None
        if isinstance(t, Pair):
            return TupleV((self.ev(t.fst, env), self.ev(t.snd, env)))
        if isinstance(t, Lam):
            body, var = t.body, t.var
            if t.ann is Ann.LIN:
                return LinV(lambda a: self.ev(body, {**env, var: RealV(float(a))}))
            return FuncV(lambda x: self.ev(body, {**env, var: x}))
        if isinstance(t, App):
            f = self.ev(t.fun, env)
            x = self.ev(t.arg, env)
            if isinstance(f, (FuncV, LinV)):
                return f(x)
            raise EvalError(f"application of non-function {f}")
        if isinstance(t, ESub):
            u = self.ev(t.bound, env)
            return self.ev(t.body, {**env, t.var: u})
        if isinstance(t, LetPair):
            a, b = _pair(self.ev(t.bound, env))
            return self.ev(t.body, {**env, t.x: a, t.y: b})
        raise EvalError(f"not a term: {t!r}")


def eval_real(t: Term, point: Mapping[str, float]) -> float:
    return _real(eval(t, point))


def function_of(t: Term, inputs: Sequence[str] | None = None) -> Callable[[Sequence[float]], float]:
    """``t`` as a Python function of its inputs (in input order by default)."""
    names = list(inputs) if inputs is not None else input_order(t)

    def f(xs: Sequence[float]) -> float:
        return eval_real(t, dict(zip(names, xs)))

    return f


def richardson_diff(f: Callable[[list[float]], float], point: Sequence[float], h=None) -> list[float]:
    """Central differences with one level of Richardson extrapolation."""
    r = [float(x) for x in point]
    out = []
    for i, ri in enumerate(r):
        hi = h if h is not None else 1e-4 * max(1.0, abs(ri))

        def central(step, i=i, ri=ri):
            up, down = list(r), list(r)
            up[i] = ri + step
            down[i] = ri - step
            return (f(up) - f(down)) / (2.0 * step)

        d1 = central(hi)
        d2 = central(hi / 2.0)
        out.append((4.0 * d2 - d1) / 3.0)
    return out


def sem_gradient(t: Term, point: Sequence[float], inputs: Sequence[str] | None = None) -> list[float]:
    """Gradient of the real function denoted by ``t`` at ``point``."""
    names = list(inputs) if inputs is not None else input_order(t)
    if len(names) != len(point):
        raise ValueError(f"point has {len(point)} coordinates, term has {len(names)} inputs")
    return richardson_diff(function_of(t, names), point)


def sem_equal(a: SemValue, b: SemValue, rel: float = 0.0, samples: Sequence[float] = ()) -> bool:
    """Equality of denotations: exact or relative for reals, pointwise for maps."""
    if isinstance(a, RealV) and isinstance(b, RealV):
        if rel == 0.0:
            return a.value == b.value
        return abs(a.value - b.value) <= rel * max(1.0, abs(a.value), abs(b.value))
    if isinstance(a, TupleV) and isinstance(b, TupleV):
        return all(sem_equal(x, y, rel, samples) for x, y in zip(a.items, b.items))
    if isinstance(a, LinV) and isinstance(b, LinV):
        return all(sem_equal(a(s), b(s), rel, samples) for s in samples)
    if isinstance(a, FuncV) and isinstance(b, FuncV):
        return all(sem_equal(a(RealV(s)), b(RealV(s)), rel, samples) for s in samples)
    return False


def sample_value(ty, rng) -> SemValue:
    """A random denotation of type ``ty`` (functions are smooth and mix their input)."""
    from .syntax import Arrow, Neg, Prod, Real

    if isinstance(ty, Real):
        return RealV(rng.uniform(-2.0, 2.0))
    if isinstance(ty, Prod):
        return TupleV((sample_value(ty.left, rng), sample_value(ty.right, rng)))
    if isinstance(ty, Neg):
        coeffs = [rng.uniform(-2.0, 2.0) for _ in range(ty.dim)]
        return LinV(lambda a: to_value([c * a for c in coeffs]))
    if isinstance(ty, Arrow):
        out = sample_value(ty.cod, rng)
        scale = rng.uniform(0.5, 1.5)

        def fn(x: SemValue) -> SemValue:
            return _perturb(out, _probe(x) * scale)

        return FuncV(fn)
    raise TypeError(f"cannot sample type {ty!r}")


def _probe(v: SemValue) -> float:
    if isinstance(v, RealV):
        return v.value
    if isinstance(v, TupleV):
        return _probe(v.items[0]) + 0.5 * _probe(v.items[1])
    if isinstance(v, LinV):
        return _probe(v(0.7))
    if isinstance(v, FuncV):
        return _probe(v(RealV(0.3)))
    return 0.0


def _perturb(v: SemValue, s: float) -> SemValue:
    if isinstance(v, RealV):
        return RealV(v.value + s)
    if isinstance(v, TupleV):
        return TupleV((_perturb(v.items[0], s), _perturb(v.items[1], 2 * s)))
    if isinstance(v, LinV):
        return LinV(lambda a: _scale(v(a), 1.0 + 0.1 * s))
    if isinstance(v, FuncV):
        return FuncV(lambda x: _perturb(v(x), s))
    return v


def _scale(v: SemValue, c: float) -> SemValue:
    if isinstance(v, RealV):
        return RealV(v.value * c)
    return TupleV((_scale(v.items[0], c), _scale(v.items[1], c)))


def sem_equal_at(a: SemValue, b: SemValue, ty, rng, rel: float = 1e-9, trials: int = 10) -> bool:
    """Equality of two denotations of type ``ty``, extensional on random arguments."""
    from .syntax import Arrow, Neg, Prod

    if isinstance(ty, Arrow):
        for _ in range(trials):
            x = sample_value(ty.dom, rng)
            if not sem_equal_at(a(x), b(x), ty.cod, rng, rel, 1):
                return False
        return True
    if isinstance(ty, Neg):
        for _ in range(trials):
            s = rng.uniform(-3.0, 3.0)
            if not sem_equal(a(s), b(s), rel):
                return False
        return True
    if isinstance(ty, Prod):
        if not (isinstance(a, TupleV) and isinstance(b, TupleV)):
            return False
        return sem_equal_at(a.items[0], b.items[0], ty.left, rng, rel, trials) and sem_equal_at(
            a.items[1], b.items[1], ty.right, rng, rel, trials
        )
    return sem_equal(a, b, rel)
